//! Signed feature-hashing embedding of (instruction, scene graph).

use serde::{Deserialize, Serialize};

use crate::scene::SceneGraph;

pub const EMBEDDING_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub norm: f64,
}

impl Embedding {
    pub fn from_vector(vector: Vec<f64>) -> Self {
        let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        Self { vector, norm }
    }

    pub fn zero() -> Self {
        Self::from_vector(vec![0.0; EMBEDDING_DIM])
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// Empty input maps to the zero vector, which is never stored.
    pub fn is_zero(&self) -> bool {
        self.norm == 0.0
    }

    /// Cosine similarity; 0 when either side is the zero vector.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        if self.is_zero() || other.is_zero() {
            return 0.0;
        }
        let dot: f64 = self
            .vector
            .iter()
            .zip(&other.vector)
            .map(|(a, b)| a * b)
            .sum();
        dot / (self.norm * other.norm)
    }
}

/// 64-bit FNV-1a.
pub fn token_hash(token: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    token
        .as_bytes()
        .iter()
        .fold(OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(PRIME))
}

/// Bucket index and sign for a token.
pub fn bucket(token: &str) -> (usize, f64) {
    let h = token_hash(token);
    let index = (h % EMBEDDING_DIM as u64) as usize;
    let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
    (index, sign)
}

pub fn instruction_tokens(instruction: &str) -> impl Iterator<Item = String> + '_ {
    instruction
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Instruction words, scene node names and `relation(subject,object)` edge strings.
pub fn task_tokens(instruction: &str, scene: &SceneGraph) -> Vec<String> {
    let mut tokens: Vec<String> = instruction_tokens(instruction).collect();
    tokens.extend(scene.nodes.iter().map(|n| n.name.to_lowercase()));
    tokens.extend(scene.edges.iter().map(|e| e.token().to_lowercase()));
    tokens
}

pub fn embed(instruction: &str, scene: &SceneGraph) -> Embedding {
    let mut vector = vec![0.0; EMBEDDING_DIM];
    for token in task_tokens(instruction, scene) {
        let (i, sign) = bucket(&token);
        vector[i] += sign;
    }
    Embedding::from_vector(vector)
}
