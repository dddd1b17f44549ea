//! Reference oracles and generators for the acceptance suite. Everything
//! here is written from the definitions, not from the library code.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use metaplan_core::meta_action::{GripperState, LocationDescription, MetaAction, MotionKind, Preposition};

/// Jaccard index by counting membership over the union.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let mut union: Vec<&String> = a.iter().chain(b.iter()).collect();
    union.sort();
    union.dedup();
    if union.is_empty() {
        return 1.0;
    }
    let both = union.iter().filter(|x| a.contains(**x) && b.contains(**x)).count();
    both as f64 / union.len() as f64
}

/// Levenshtein distance by plain recursion; only for short inputs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let substitute = levenshtein(ra, rb) + usize::from(x != y);
            let delete = levenshtein(ra, b) + 1;
            let insert = levenshtein(a, rb) + 1;
            substitute.min(delete).min(insert)
        }
    }
}

pub fn line_similarity(a: &[String], b: &[String]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

const PREPOSITIONS: [Preposition; 11] = [
    Preposition::Above,
    Preposition::On,
    Preposition::Into,
    Preposition::FrontOn,
    Preposition::Behind,
    Preposition::LeftOf,
    Preposition::RightOf,
    Preposition::Up,
    Preposition::Down,
    Preposition::Forward,
    Preposition::Backward,
];

pub fn random_state(rng: &mut ChaCha8Rng) -> GripperState {
    if rng.random() {
        GripperState::Open
    } else {
        GripperState::Close
    }
}

fn random_word(rng: &mut ChaCha8Rng) -> String {
    const FIRST: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    const REST: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789_-";
    let len = rng.random_range(1..=8);
    (0..len)
        .map(|i| {
            let set = if i == 0 { FIRST } else { REST };
            set[rng.random_range(0..set.len())] as char
        })
        .collect()
}

/// A well-formed action with a random (possibly multi-word) object.
pub fn random_action(rng: &mut ChaCha8Rng) -> MetaAction {
    let object = rng.random_bool(0.8).then(|| {
        let words = rng.random_range(1..=3);
        (0..words).map(|_| random_word(rng)).collect::<Vec<_>>().join(" ")
    });
    let motion = if rng.random() { MotionKind::Move } else { MotionKind::Rotate };
    let preposition = PREPOSITIONS[rng.random_range(0..PREPOSITIONS.len())];
    MetaAction::new(
        random_state(rng),
        motion,
        LocationDescription::new(preposition, object.as_deref()),
        random_state(rng),
    )
}

/// Arbitrary text: printable noise mixed with fragments of real lines.
pub fn random_line(rng: &mut ChaCha8Rng) -> String {
    const PIECES: &[&str] = &[
        "opened", "closed", "move to", "rotate to", "front on", "left of", "into", ",", ", ", " ", "\t",
        "above", "cup", "", "\u{0}", "é", "🙂", "\"", "\\", "\n",
    ];
    let n = rng.random_range(0..12);
    let mut s = String::new();
    for _ in 0..n {
        if rng.random_bool(0.6) {
            s.push_str(PIECES[rng.random_range(0..PIECES.len())]);
        } else {
            s.push(char::from_u32(rng.random_range(0..0x3000)).unwrap_or('?'));
        }
    }
    s
}

/// Simulated gripper: index of the first action whose `pre` disagrees
/// with the state left by its predecessor.
pub fn first_break(actions: &[(GripperState, GripperState)]) -> Option<usize> {
    (1..actions.len()).find(|&i| actions[i - 1].1 != actions[i].0)
}
