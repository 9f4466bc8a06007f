//! Synthetic demo-language program generators for experiments and tests.
//!
//! `random_program` emits mixed programs whose ASTs stay within depth 6;
//! the two [`Family`] generators emit structurally distinct programs
//! (loop-dominated vs branch-dominated) within depth 8.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NAMES: [&str; 6] = ["a", "b", "x", "y", "i", "n"];
const OPS: [&str; 5] = ["+", "-", "*", "<", "=="];

fn name(rng: &mut ChaCha8Rng) -> &'static str {
    NAMES[rng.random_range(0..NAMES.len())]
}

fn leaf(rng: &mut ChaCha8Rng) -> String {
    if rng.random_range(0..2) == 0 {
        String::from(name(rng))
    } else {
        format!("{}", rng.random_range(0..10))
    }
}

fn binop(rng: &mut ChaCha8Rng) -> String {
    format!(
        "{} {} {}",
        leaf(rng),
        OPS[rng.random_range(0..OPS.len())],
        leaf(rng)
    )
}

fn comparison(rng: &mut ChaCha8Rng) -> String {
    format!("{} < {}", name(rng), leaf(rng))
}

/// A statement whose subtree stays within `spare` levels below the
/// statement's own level (statements sit at level 3 in a flat function).
fn statement(rng: &mut ChaCha8Rng, allow_blocks: bool) -> String {
    let kind = rng.random_range(0..if allow_blocks { 7 } else { 5 });
    match kind {
        0 => format!("{} = {};", name(rng), leaf(rng)),
        1 => format!("{} = {};", name(rng), binop(rng)),
        // Left-associative chain nests one extra level.
        2 => format!(
            "{} = {} + {} * {};",
            name(rng),
            leaf(rng),
            name(rng),
            rng.random_range(1..9)
        ),
        3 => format!("call({}, {});", leaf(rng), binop(rng)),
        4 => format!("return {};", binop(rng)),
        5 => format!(
            "if ({}) {{ {} = {}; {} = {}; }}",
            comparison(rng),
            name(rng),
            leaf(rng),
            name(rng),
            leaf(rng)
        ),
        _ => format!(
            "while ({}) {{ {} = {}; }}",
            comparison(rng),
            name(rng),
            leaf(rng)
        ),
    }
}

/// A mixed program whose AST depth is at most 6.
pub fn random_program(rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    let functions = rng.random_range(2..=3);
    for f in 0..functions {
        let params = match rng.random_range(0..3) {
            0 => String::new(),
            1 => String::from(name(rng)),
            _ => format!("{}, {}", name(rng), name(rng)),
        };
        out.push_str(&format!("fn f{f}({params}) {{\n"));
        for _ in 0..rng.random_range(2..=4) {
            out.push_str("  ");
            out.push_str(&statement(rng, true));
            out.push('\n');
        }
        out.push_str("}\n");
    }
    out
}

pub fn random_corpus(seed: u64, count: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_program(&mut rng)).collect()
}

/// The two structural program families used by the downstream experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    LoopHeavy,
    BranchHeavy,
}

fn loop_statement(rng: &mut ChaCha8Rng) -> String {
    if rng.random_range(0..3) == 0 {
        // Nested loop; the innermost assignments must stay leaf-valued to
        // respect the depth-8 cap.
        format!(
            "while ({}) {{ {} = {} + 1; while ({}) {{ {} = {}; }} }}",
            comparison(rng),
            name(rng),
            name(rng),
            comparison(rng),
            name(rng),
            leaf(rng),
        )
    } else {
        format!(
            "while ({}) {{ {} = {} + {}; {} = {}; }}",
            comparison(rng),
            name(rng),
            name(rng),
            rng.random_range(1..5),
            name(rng),
            leaf(rng),
        )
    }
}

fn branch_statement(rng: &mut ChaCha8Rng) -> String {
    if rng.random_range(0..3) == 0 {
        format!(
            "if ({}) {{ {} = {}; if ({}) {{ {} = {}; }} }}",
            comparison(rng),
            name(rng),
            leaf(rng),
            comparison(rng),
            name(rng),
            leaf(rng),
        )
    } else {
        format!(
            "if ({} == {}) {{ {} = {} - {}; call({}); }}",
            name(rng),
            leaf(rng),
            name(rng),
            name(rng),
            rng.random_range(1..5),
            name(rng),
        )
    }
}

/// A program from one family; AST depth is at most 8.
pub fn family_program(rng: &mut ChaCha8Rng, family: Family) -> String {
    let mut out = String::new();
    out.push_str(&format!("fn main({}) {{\n", name(rng)));
    out.push_str(&format!("  {} = {};\n", name(rng), rng.random_range(0..10)));
    let body = rng.random_range(2..=4);
    for _ in 0..body {
        let stmt = match family {
            Family::LoopHeavy => loop_statement(rng),
            Family::BranchHeavy => branch_statement(rng),
        };
        out.push_str("  ");
        out.push_str(&stmt);
        out.push('\n');
    }
    out.push_str(&format!("  return {};\n", name(rng)));
    out.push_str("}\n");
    out
}

pub fn family_corpus(seed: u64, family: Family, count: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| family_program(&mut rng, family)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{parse_demo_source, Caps};

    #[test]
    fn random_programs_parse_within_depth_six() {
        for (i, src) in random_corpus(11, 100).iter().enumerate() {
            let g = parse_demo_source(src, &Caps::default())
                .unwrap_or_else(|e| panic!("program {i} failed to parse: {e}\n{src}"));
            assert!(g.depth() <= 6, "program {i} depth {} > 6\n{src}", g.depth());
            assert!(g.node_count() <= 1000);
        }
    }

    #[test]
    fn family_programs_parse_within_depth_eight() {
        for family in [Family::LoopHeavy, Family::BranchHeavy] {
            for (i, src) in family_corpus(13, family, 100).iter().enumerate() {
                let g = parse_demo_source(src, &Caps::default())
                    .unwrap_or_else(|e| panic!("{family:?} program {i} failed: {e}\n{src}"));
                assert!(g.depth() <= 8, "{family:?} program {i} too deep\n{src}");
            }
        }
    }

    #[test]
    fn families_use_their_signature_statement() {
        for src in family_corpus(17, Family::LoopHeavy, 20) {
            assert!(src.contains("while"));
            assert!(!src.contains("if ("));
        }
        for src in family_corpus(17, Family::BranchHeavy, 20) {
            assert!(src.contains("if ("));
            assert!(!src.contains("while"));
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        assert_eq!(random_corpus(5, 10), random_corpus(5, 10));
        assert_eq!(
            family_corpus(5, Family::LoopHeavy, 10),
            family_corpus(5, Family::LoopHeavy, 10)
        );
    }
}
