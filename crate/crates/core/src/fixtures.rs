//! Small hand-authored hierarchies bundled with the crate.

use crate::taxonomy::Taxonomy;

/// News-taxonomy subgraph, four levels deep.
pub const FIG1_TAXONOMY_TSV: &str = include_str!("../fixtures/fig1_taxonomy.tsv");

/// NYT subgraph holding the four gold paths of the case-study article.
pub const CASE_STUDY_TAXONOMY_TSV: &str = include_str!("../fixtures/case_study_taxonomy.tsv");

/// The case-study article as a one-line corpus.
pub const CASE_STUDY_JSONL: &str = include_str!("../fixtures/case_study.jsonl");

pub fn fig1_taxonomy() -> Taxonomy {
    Taxonomy::parse(FIG1_TAXONOMY_TSV).expect("bundled fixture parses")
}

pub fn case_study_taxonomy() -> Taxonomy {
    Taxonomy::parse(CASE_STUDY_TAXONOMY_TSV).expect("bundled fixture parses")
}

/// Seven labels over three levels, used by the gradient-check runner.
pub fn seven_label_taxonomy() -> Taxonomy {
    Taxonomy::parse("a\tROOT\nb\tROOT\na1\ta\na2\ta\nb1\tb\na1x\ta1\nb1x\tb1\n").expect("literal fixture parses")
}
