//! Regenerates the bundled mini corpus under `data/mini/`:
//!
//!   - `stories.jsonl`        200 short themed stories with titles
//!   - `embeddings.20d.txt`   20-dim vectors covering every surface token
//!                            and every content stem in the corpus
//!   - `titles.txt`           24 fresh titles for generation smoke runs
//!
//! Everything is drawn from one fixed-seed RNG, so the files are
//! byte-stable across runs. Run from the workspace root:
//!
//!   cargo run -p fabula-core --example make_mini

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fabula_core::corpus::{stem, tokenize};

const THEMES: [(&str, [&str; 16]); 8] = [
    ("ocean", [
        "whale", "coral", "tide", "harbor", "sailor", "wave", "storm", "lighthouse", "gull",
        "anchor", "fisherman", "shore", "seaweed", "dolphin", "breeze", "boat",
    ]),
    ("space", [
        "comet", "orbit", "rocket", "station", "astronaut", "lunar", "capsule", "telescope",
        "nebula", "launch", "cosmic", "satellite", "crater", "galaxy", "shuttle", "beacon",
    ]),
    ("forest", [
        "fox", "birch", "moss", "trail", "ranger", "owl", "thicket", "fern", "badger",
        "clearing", "pine", "lantern", "cabin", "creek", "antler", "bramble",
    ]),
    ("music", [
        "violin", "melody", "concert", "rhythm", "chorus", "drummer", "stage", "encore",
        "ballad", "tempo", "piano", "singer", "audience", "harmony", "quartet", "anthem",
    ]),
    ("kitchen", [
        "baker", "dough", "oven", "cinnamon", "ladle", "stew", "pantry", "flour", "skillet",
        "supper", "crumb", "kettle", "butter", "spice", "loaf", "simmer",
    ]),
    ("desert", [
        "dune", "cactus", "caravan", "oasis", "mirage", "nomad", "scorpion", "canyon",
        "sandstorm", "camel", "mesa", "ridge", "saddle", "ember", "sunrise", "pebble",
    ]),
    ("city", [
        "tram", "alley", "market", "vendor", "plaza", "bridge", "lamplight", "courier",
        "rooftop", "subway", "awning", "kiosk", "pigeon", "pavement", "arcade", "signal",
    ]),
    ("winter", [
        "sled", "frost", "blizzard", "mitten", "hearth", "icicle", "snowdrift", "skater",
        "thaw", "flurry", "chimney", "woolen", "firewood", "avalanche", "glacier", "cocoa",
    ]),
];

/// Sentence patterns; `{0}`..`{5}` are replaced with the story's theme words.
const PATTERNS: [&str; 10] = [
    "the {0} waited near the {1} .",
    "a {2} drifted past the {3} .",
    "when the {4} appeared , the {0} turned toward it .",
    "someone said the {1} belonged beside the {5} .",
    "the {3} stayed close while the {2} moved away .",
    "every morning the {0} watched the {4} in silence .",
    "at last the {5} rested beside the {1} .",
    "nobody remembered how the {2} reached the {0} .",
    "the {4} grew quiet as the {3} came home .",
    "one evening the {5} carried the {2} across the {1} .",
];

const TITLE_PATTERNS: [&str; 4] =
    ["the {0} and the {1}", "a {2} near the {3}", "the {4} of the {0}", "when the {1} met the {5}"];

fn fill(pattern: &str, words: &[&str]) -> String {
    let mut out = pattern.to_string();
    for (i, w) in words.iter().enumerate() {
        out = out.replace(&format!("{{{i}}}"), w);
    }
    out
}

/// Six distinct theme words for one story, in a seeded random order.
fn pick_words<'a>(rng: &mut ChaCha8Rng, theme: &[&'a str; 16]) -> Vec<&'a str> {
    let mut idx: Vec<usize> = (0..theme.len()).collect();
    for i in (1..idx.len()).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx.truncate(6);
    idx.into_iter().map(|i| theme[i]).collect()
}

fn main() -> std::io::Result<()> {
    let dir = std::path::Path::new("data/mini");
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // --- stories.jsonl -----------------------------------------------------
    let mut stories = String::new();
    let mut all_text = String::new();
    for i in 0..200 {
        let (_, theme) = &THEMES[i % THEMES.len()];
        let words = pick_words(&mut rng, theme);
        let title = fill(TITLE_PATTERNS[i % TITLE_PATTERNS.len()], &words);
        let n_sents = 4 + rng.random_range(0..2usize);
        let mut order: Vec<usize> = (0..PATTERNS.len()).collect();
        for k in (1..order.len()).rev() {
            let j = rng.random_range(0..=k);
            order.swap(k, j);
        }
        let story: Vec<String> =
            order[..n_sents].iter().map(|&p| fill(PATTERNS[p], &words)).collect();
        let story = story.join(" ");
        let record = serde_json::json!({ "title": title, "story": story });
        writeln!(stories, "{record}").unwrap();
        writeln!(all_text, "{title} {story}").unwrap();
    }
    std::fs::write(dir.join("stories.jsonl"), &stories)?;

    // --- titles.txt: three fresh titles per theme --------------------------
    let mut titles = String::new();
    for (t, (_, theme)) in THEMES.iter().enumerate() {
        for k in 0..3 {
            let words = pick_words(&mut rng, theme);
            let title = fill(TITLE_PATTERNS[(t + k) % TITLE_PATTERNS.len()], &words);
            writeln!(titles, "{title}").unwrap();
            writeln!(all_text, "{title}").unwrap();
        }
    }
    std::fs::write(dir.join("titles.txt"), &titles)?;

    // --- embeddings.20d.txt -------------------------------------------------
    // Cover every surface token and every stem so both the topic model's
    // word-vector initialization and the title encoder find their words.
    let mut words: BTreeSet<String> = BTreeSet::new();
    for tok in tokenize(&all_text) {
        if tok.chars().any(|c| c.is_alphabetic()) {
            words.insert(stem(&tok));
            words.insert(tok);
        }
    }
    let mut emb = String::new();
    for w in &words {
        let comps: Vec<String> =
            (0..20).map(|_| format!("{:.5}", rng.random_range(-0.5..0.5))).collect();
        writeln!(emb, "{w} {}", comps.join(" ")).unwrap();
    }
    std::fs::write(dir.join("embeddings.20d.txt"), &emb)?;

    println!(
        "wrote data/mini: 200 stories, {} titles, {} embedding rows",
        titles.lines().count(),
        words.len()
    );
    Ok(())
}
