//! Synthetic corpora paired with mock-server fixtures.

use rand::seq::index;
use rand::Rng;
use textlabel_core::population::{Population, TextPiece};
use textlabel_core::rng;

use crate::mock::MockFixture;
use crate::probe::ProbeConfig;
use crate::split::split_text;

const WORDS: &[&str] = &[
    "amend", "appropriations", "authorize", "benefits", "border", "budget", "clean", "coastal", "commerce",
    "community", "credit", "defense", "disaster", "education", "energy", "enforcement", "families", "farm",
    "federal", "grants", "health", "highway", "housing", "infrastructure", "insurance", "justice", "labor",
    "medicare", "military", "national", "pension", "program", "protection", "public", "reform", "relief",
    "research", "rural", "safety", "security", "small", "business", "student", "tax", "trade", "transit",
    "veterans", "water", "wildlife", "workforce",
];

fn bill_text<R: Rng>(i: usize, rng: &mut R) -> String {
    let len = rng.random_range(12..30);
    let body: Vec<&str> = (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
    format!(
        "H.R. {} To {} section {} of title {}, {}.",
        1000 + i,
        body[0],
        rng.random_range(1..900),
        rng.random_range(1..55),
        body[1..].join(" ")
    )
}

/// `n` bill-like texts of which exactly `reproduced` (chosen with `seed`)
/// are completed verbatim by the mock; half the rest get a one-word
/// near-miss and the others an unrelated reply.
pub fn planted_corpus(n: usize, reproduced: usize, seed: u64, config: &ProbeConfig) -> (Population<f64>, MockFixture) {
    assert!(reproduced <= n);
    let mut chosen = vec![false; n];
    let mut pick = rng::stream(seed, rng::TAG_PARTITION, 0);
    for i in index::sample(&mut pick, n, reproduced) {
        chosen[i] = true;
    }
    let mut fixture = MockFixture {
        default_completion: Some("UNRELATED".to_string()),
        ..MockFixture::default()
    };
    let pieces = (0..n)
        .map(|i| {
            let mut rng = rng::stream(seed, rng::TAG_SYNTHETIC, i as u64);
            let text = bill_text(i, &mut rng);
            let split = split_text(&text, config.split_fraction).expect("nonempty text");
            let reply = if chosen[i] {
                format!("{}\n", split.suffix)
            } else if i % 2 == 0 {
                let mut words: Vec<&str> = split.suffix.split(' ').collect();
                let last = words.len() - 1;
                words[last] = "amended.";
                words.join(" ")
            } else {
                "UNRELATED".to_string()
            };
            fixture.completions.insert(config.prompt(&split.prefix), reply);
            TextPiece::new(format!("b{i}"), 0.0, vec![1.0]).with_text(text)
        })
        .collect();
    (Population::new(pieces).expect("distinct ids"), fixture)
}

/// Texts in `clusters` groups with planted embeddings: members of a group sit
/// near a shared random center. The mock reproduces every odd-indexed piece
/// and returns an unrelated text (with its own planted embedding) otherwise.
pub fn cluster_corpus(clusters: usize, per_cluster: usize, dim: usize, seed: u64, config: &ProbeConfig) -> (Population<f64>, MockFixture) {
    let mut rng = rng::stream(seed, rng::TAG_SYNTHETIC, u64::MAX);
    fn gauss<R: Rng>(rng: &mut R) -> f64 {
        rng.random_range(-1.0..1.0)
    }
    let centers: Vec<Vec<f64>> = (0..clusters).map(|_| (0..dim).map(|_| gauss(&mut rng)).collect()).collect();
    let mut fixture = MockFixture::default();
    let mut pieces = Vec::new();
    for c in 0..clusters {
        for m in 0..per_cluster {
            let i = c * per_cluster + m;
            let text = format!("item{i} of cluster {c} member {m} {}", WORDS[i % WORDS.len()]);
            let split = split_text(&text, config.split_fraction).expect("nonempty text");
            let near: Vec<f64> = centers[c].iter().map(|x| x + 0.1 * gauss(&mut rng)).collect();
            fixture.embeddings.insert(text.clone(), near);
            let reply = if i % 2 == 1 {
                split.suffix.clone()
            } else {
                let other = format!("unrelated reply {i}");
                let full = format!("{}{}{}", split.prefix, split.separator, other);
                fixture.embeddings.insert(full, (0..dim).map(|_| gauss(&mut rng)).collect());
                other
            };
            fixture.completions.insert(config.prompt(&split.prefix), reply);
            pieces.push(TextPiece::new(format!("c{i}"), 0.0, vec![1.0]).with_text(text));
        }
    }
    (Population::new(pieces).expect("distinct ids"), fixture)
}
