//! A procedurally generated English-like corpus used as the bundled desk
//! dataset. Four domains (stories, wiki, subtitles, prose) share one Zipfian
//! lexicon of real and invented words. Subject-verb and copula agreement are
//! always respected, which gives the minimal-pair task something to measure.

use rand::Rng;

use crate::corpus::{Document, MinimalPair};
use crate::rng::{label, substream, StreamRng};

pub const DOMAINS: [&str; 4] = ["stories", "wiki", "subtitles", "prose"];

const ONSETS: [&str; 24] = [
    "b", "br", "c", "ch", "d", "dr", "f", "fl", "g", "gr", "h", "j", "k", "l", "m", "n", "p", "pl", "r", "s", "st", "t",
    "tr", "v",
];
const VOWELS: [&str; 10] = ["a", "e", "i", "o", "u", "ai", "ea", "oo", "ou", "ie"];
const CODAS: [&str; 12] = ["", "", "n", "r", "l", "m", "nd", "st", "ck", "sh", "th", "ng"];

const REAL_NOUNS: [&str; 40] = [
    "dog", "cat", "house", "tree", "river", "king", "girl", "boy", "friend", "mother", "father", "ball", "garden",
    "forest", "city", "book", "ship", "bird", "child", "road", "door", "window", "mountain", "lake", "village",
    "teacher", "farmer", "horse", "apple", "box", "letter", "table", "bridge", "castle", "flower", "storm", "song",
    "market", "island", "lamp",
];
const REAL_VERBS: [&str; 30] = [
    "walk", "jump", "play", "look", "open", "call", "help", "watch", "climb", "paint", "carry", "visit", "follow",
    "build", "clean", "pull", "push", "kick", "touch", "finish", "wash", "fix", "catch", "listen", "answer", "cook",
    "dream", "laugh", "learn", "start",
];
const REAL_ADJS: [&str; 30] = [
    "big", "small", "happy", "sad", "old", "young", "red", "blue", "green", "quiet", "loud", "bright", "dark", "warm",
    "cold", "brave", "kind", "strange", "tall", "tiny", "gentle", "heavy", "quick", "slow", "shiny", "soft", "wild",
    "clever", "lonely", "golden",
];
const REAL_ADVS: [&str; 16] = [
    "quickly", "slowly", "quietly", "happily", "carefully", "loudly", "often", "never", "always", "suddenly", "again",
    "together", "gently", "soon", "later", "today",
];
const PREPS: [&str; 12] =
    ["in", "on", "under", "near", "behind", "beside", "across", "through", "over", "around", "into", "from"];
const PLACE_SUFFIXES: [&str; 6] = ["ton", "ville", "burg", "ford", "mouth", "field"];
const PLACE_KINDS: [&str; 8] = ["town", "city", "village", "region", "district", "harbor", "valley", "province"];
const INTERJECTIONS: [&str; 8] = ["Oh", "Look", "Wow", "Hey", "Wait", "Please", "Hurry", "Listen"];
const SHORT_LINES: [&str; 10] =
    ["Yeah.", "No.", "Okay.", "Come on.", "I know.", "Really?", "What?", "Thank you.", "Let's go.", "Not now."];

/// Word lists with inflected forms, sampled with Zipfian weights.
#[derive(Debug, Clone)]
pub struct Lexicon {
    nouns: Vec<(String, String)>,
    verbs: Vec<Verb>,
    adjs: Vec<String>,
    advs: Vec<String>,
    names: Vec<String>,
    places: Vec<String>,
    noun_z: Zipf,
    verb_z: Zipf,
    adj_z: Zipf,
    adv_z: Zipf,
    name_z: Zipf,
    place_z: Zipf,
}

#[derive(Debug, Clone)]
struct Verb {
    base: String,
    third: String,
    past: String,
    ing: String,
}

#[derive(Debug, Clone)]
struct Zipf {
    cumulative: Vec<f64>,
}

impl Zipf {
    fn new(n: usize, s: f64) -> Self {
        let mut acc = 0.0;
        let cumulative = (1..=n)
            .map(|i| {
                acc += 1.0 / (i as f64).powf(s);
                acc
            })
            .collect();
        Zipf { cumulative }
    }

    fn sample(&self, rng: &mut StreamRng) -> usize {
        let u = rng.random::<f64>() * self.cumulative.last().unwrap();
        self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }
}

fn sibilant(w: &str) -> bool {
    ["s", "sh", "ch", "x", "z"].iter().any(|e| w.ends_with(e))
}

fn plural(w: &str) -> String {
    if w == "child" {
        "children".into()
    } else if sibilant(w) {
        format!("{w}es")
    } else if w.ends_with('y') && !w.ends_with("ay") && !w.ends_with("oy") {
        format!("{}ies", &w[..w.len() - 1])
    } else {
        format!("{w}s")
    }
}

fn verb_forms(base: &str) -> Verb {
    let third = if sibilant(base) {
        format!("{base}es")
    } else if base.ends_with('y') && !base.ends_with("ay") {
        format!("{}ies", &base[..base.len() - 1])
    } else {
        format!("{base}s")
    };
    let past = if base == "build" {
        "built".into()
    } else if base == "catch" {
        "caught".into()
    } else if base.ends_with('e') {
        format!("{base}d")
    } else if base.ends_with('y') && !base.ends_with("ay") {
        format!("{}ied", &base[..base.len() - 1])
    } else {
        format!("{base}ed")
    };
    let ing = if base.ends_with('e') && !base.ends_with("ee") {
        format!("{}ing", &base[..base.len() - 1])
    } else {
        format!("{base}ing")
    };
    Verb { base: base.into(), third, past, ing }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn invent(rng: &mut StreamRng, syllables: usize) -> String {
    let mut w = String::new();
    for i in 0..syllables {
        w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
        w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
        if i + 1 == syllables || rng.random_bool(0.3) {
            w.push_str(CODAS[rng.random_range(0..CODAS.len())]);
        }
    }
    w
}

fn invent_many(rng: &mut StreamRng, n: usize, taken: &mut std::collections::HashSet<String>, min_syl: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syl = rng.random_range(min_syl..=3);
        let w = invent(rng, syl);
        if w.len() >= 3 && taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

impl Lexicon {
    /// Build the lexicon; sizes are counts of invented words added to the real ones.
    pub fn new(seed: u64, nouns: usize, verbs: usize, adjs: usize) -> Self {
        let mut rng = substream(seed, &[label("desk/lexicon")]);
        let mut taken: std::collections::HashSet<String> = REAL_NOUNS
            .iter()
            .chain(&REAL_VERBS)
            .chain(&REAL_ADJS)
            .chain(&REAL_ADVS)
            .chain(&PREPS)
            .map(|s| s.to_string())
            .collect();
        // Interleave real words at the head so they are frequent.
        let mut noun_list: Vec<String> = REAL_NOUNS.iter().map(|s| s.to_string()).collect();
        noun_list.extend(invent_many(&mut rng, nouns, &mut taken, 1));
        let mut verb_list: Vec<String> = REAL_VERBS.iter().map(|s| s.to_string()).collect();
        verb_list.extend(invent_many(&mut rng, verbs, &mut taken, 1));
        let mut adj_list: Vec<String> = REAL_ADJS.iter().map(|s| s.to_string()).collect();
        adj_list.extend(invent_many(&mut rng, adjs, &mut taken, 1).into_iter().map(|w| format!("{w}y")));
        let mut adv_list: Vec<String> = REAL_ADVS.iter().map(|s| s.to_string()).collect();
        adv_list.extend(adj_list[REAL_ADJS.len()..].iter().take(adjs / 3).map(|a| format!("{}ily", &a[..a.len() - 1])));
        let names: Vec<String> = invent_many(&mut rng, nouns / 4, &mut taken, 2).iter().map(|w| capitalize(w)).collect();
        let places: Vec<String> = invent_many(&mut rng, nouns / 5, &mut taken, 1)
            .iter()
            .map(|w| format!("{}{}", capitalize(w), PLACE_SUFFIXES[rng.random_range(0..PLACE_SUFFIXES.len())]))
            .collect();
        Lexicon {
            noun_z: Zipf::new(noun_list.len(), 1.0),
            verb_z: Zipf::new(verb_list.len(), 1.0),
            adj_z: Zipf::new(adj_list.len(), 1.0),
            adv_z: Zipf::new(adv_list.len(), 1.0),
            name_z: Zipf::new(names.len(), 0.9),
            place_z: Zipf::new(places.len(), 0.9),
            nouns: noun_list.iter().map(|n| (n.clone(), plural(n))).collect(),
            verbs: verb_list.iter().map(|v| verb_forms(v)).collect(),
            adjs: adj_list,
            advs: adv_list,
            names,
            places,
        }
    }

    /// Default desk lexicon.
    pub fn desk(seed: u64) -> Self {
        Self::new(seed, 2400, 900, 700)
    }

    fn noun(&self, r: &mut StreamRng) -> &str {
        &self.nouns[self.noun_z.sample(r)].0
    }
    fn nouns(&self, r: &mut StreamRng) -> &str {
        &self.nouns[self.noun_z.sample(r)].1
    }
    fn verb(&self, r: &mut StreamRng) -> &Verb {
        &self.verbs[self.verb_z.sample(r)]
    }
    fn adj(&self, r: &mut StreamRng) -> &str {
        &self.adjs[self.adj_z.sample(r)]
    }
    fn adv(&self, r: &mut StreamRng) -> &str {
        &self.advs[self.adv_z.sample(r)]
    }
    fn name(&self, r: &mut StreamRng) -> &str {
        &self.names[self.name_z.sample(r)]
    }
    fn place(&self, r: &mut StreamRng) -> &str {
        &self.places[self.place_z.sample(r)]
    }
}

fn pick<'a>(r: &mut StreamRng, xs: &[&'a str]) -> &'a str {
    xs[r.random_range(0..xs.len())]
}

/// A subject noun phrase and whether it is plural.
fn subject(lx: &Lexicon, r: &mut StreamRng) -> (String, bool) {
    match r.random_range(0..5) {
        0 => (format!("the {} {}", lx.adj(r), lx.noun(r)), false),
        1 => (format!("the {}", lx.nouns(r)), true),
        2 => (format!("the {} {}", lx.adj(r), lx.nouns(r)), true),
        3 => (lx.name(r).to_string(), false),
        _ => (format!("the {}", lx.noun(r)), false),
    }
}

fn present(v: &Verb, plural: bool) -> &str {
    if plural {
        &v.base
    } else {
        &v.third
    }
}

fn sentence_case(s: String) -> String {
    capitalize(&s)
}

fn story_sentence(lx: &Lexicon, r: &mut StreamRng, hero: &str) -> String {
    match r.random_range(0..9) {
        0 => format!("{hero} {} the {} {} {} the {}.", lx.verb(r).past, lx.adj(r), lx.noun(r), pick(r, &PREPS), lx.noun(r)),
        1 => format!("Every day, {hero} {} {} {} the {}.", lx.verb(r).third, lx.adv(r), pick(r, &PREPS), lx.noun(r)),
        2 => format!(
            "\"{}! I want to {} the {},\" said {hero}.",
            pick(r, &INTERJECTIONS),
            lx.verb(r).base,
            lx.noun(r)
        ),
        3 => {
            let (s, pl) = subject(lx, r);
            sentence_case(format!("{s} {} {}.", present(lx.verb(r), pl), lx.adv(r)))
        }
        4 => format!("{hero} was {} because the {} {} {} the {}.", lx.adj(r), lx.noun(r), lx.verb(r).past, pick(r, &PREPS), lx.nouns(r)),
        5 => format!("The {} {} {} {hero}.", lx.nouns(r), lx.verb(r).past, pick(r, &["with", "for", "behind", "near"])),
        6 => format!("{hero} liked {} the {} {}.", lx.verb(r).ing, lx.nouns(r), lx.adv(r)),
        7 => {
            let (s, pl) = subject(lx, r);
            sentence_case(format!("{s} {} {}.", if pl { "are" } else { "is" }, lx.adj(r)))
        }
        _ => format!("Then {hero} {} the {} and {} {}.", lx.verb(r).past, lx.noun(r), lx.verb(r).past, lx.adv(r)),
    }
}

fn story(lx: &Lexicon, r: &mut StreamRng) -> String {
    let hero = lx.name(r).to_string();
    let mut s = vec![format!("Once upon a time, there was a {} {} named {hero}.", lx.adj(r), lx.noun(r))];
    for _ in 0..r.random_range(6..18) {
        s.push(story_sentence(lx, r, &hero));
    }
    s.push(format!("In the end, {hero} and the {} were {} friends.", lx.noun(r), lx.adj(r)));
    s.join(" ")
}

fn wiki(lx: &Lexicon, r: &mut StreamRng) -> String {
    let place = lx.place(r).to_string();
    let mut s = vec![format!(
        "{place} is a {} {} in {}.",
        lx.adj(r),
        pick(r, &PLACE_KINDS),
        lx.place(r)
    )];
    for _ in 0..r.random_range(5..14) {
        s.push(match r.random_range(0..7) {
            0 => format!("It was founded in {} by {} {}.", r.random_range(1100..2000), lx.name(r), lx.name(r)),
            1 => format!("The {} of {place} {} {} {} each year.", lx.noun(r), lx.verb(r).third, r.random_range(2..900), lx.nouns(r)),
            2 => format!("According to the {} census, the population was {}.", r.random_range(1900..2021), r.random_range(120..90000)),
            3 => format!("{} {} the first {} in {}.", lx.name(r), lx.verb(r).past, lx.noun(r), r.random_range(1200..2010)),
            4 => format!("The {} of the region {} {} {}.", lx.nouns(r), lx.verb(r).base, lx.adj(r), lx.nouns(r)),
            5 => format!("The local {} is known for its {} {}.", lx.noun(r), lx.adj(r), lx.nouns(r)),
            _ => {
                let (s, pl) = subject(lx, r);
                sentence_case(format!("{s} {} {} {}.", present(lx.verb(r), pl), pick(r, &PREPS), place))
            }
        });
    }
    s.join(" ")
}

fn subtitles(lx: &Lexicon, r: &mut StreamRng) -> String {
    let who = lx.name(r).to_string();
    let mut lines = vec![format!("- {who}, where is the {}?", lx.noun(r))];
    for _ in 0..r.random_range(8..22) {
        lines.push(match r.random_range(0..8) {
            0 => format!("- I {} it {}.", lx.verb(r).past, lx.adv(r)),
            1 => format!("- {}, wait!", lx.name(r)),
            2 => format!("- We have to {} the {} now.", lx.verb(r).base, lx.nouns(r)),
            3 => format!("- Don't {} me.", lx.verb(r).base),
            4 => format!("- What are you doing with the {}?", lx.noun(r)),
            5 => format!("- It {} {} the {}.", lx.verb(r).third, pick(r, &PREPS), lx.noun(r)),
            6 => format!("- They {} {}.", lx.verb(r).base, lx.adv(r)),
            _ => format!("- {}", pick(r, &SHORT_LINES)),
        });
    }
    lines.join("\n")
}

fn prose(lx: &Lexicon, r: &mut StreamRng) -> String {
    let mut s = Vec::new();
    for _ in 0..r.random_range(4..11) {
        s.push(match r.random_range(0..5) {
            0 => format!(
                "The {} {} {} {} the {} {}, and the {} {} {}.",
                lx.adj(r),
                lx.noun(r),
                lx.verb(r).past,
                pick(r, &PREPS),
                lx.adj(r),
                lx.noun(r),
                lx.nouns(r),
                lx.verb(r).past,
                lx.adv(r)
            ),
            1 => format!(
                "When {} {} the {}, {} {} that the {} {} {}.",
                lx.name(r),
                lx.verb(r).past,
                lx.noun(r),
                pick(r, &["she", "he", "they"]),
                lx.verb(r).past,
                lx.noun(r),
                pick(r, &["was", "seemed", "looked"]),
                lx.adj(r)
            ),
            2 => format!(
                "There was something {} about the {}, something that {} {} the {}.",
                lx.adj(r),
                lx.noun(r),
                lx.verb(r).past,
                pick(r, &PREPS),
                lx.nouns(r)
            ),
            3 => format!("{} {} the {} as if it were {}.", pick(r, &["She", "He", "It"]), lx.verb(r).third, lx.noun(r), lx.adj(r)),
            _ => {
                let (s, pl) = subject(lx, r);
                sentence_case(format!("{s} {} {} the {} {}.", present(lx.verb(r), pl), pick(r, &PREPS), lx.adj(r), lx.noun(r)))
            }
        });
    }
    s.join(" ")
}

/// Generate documents round-robin over the four domains until about `words`
/// whitespace-separated words have been produced.
pub fn generate(seed: u64, words: usize) -> Vec<Document> {
    let lx = Lexicon::desk(seed);
    let mut docs = Vec::new();
    let mut produced = 0;
    let mut i = 0u64;
    while produced < words {
        let d = (i % DOMAINS.len() as u64) as usize;
        let mut r = substream(seed, &[label("desk/doc"), i]);
        let text = match d {
            0 => story(&lx, &mut r),
            1 => wiki(&lx, &mut r),
            2 => subtitles(&lx, &mut r),
            _ => prose(&lx, &mut r),
        };
        produced += text.split_whitespace().count();
        docs.push(Document { domain: DOMAINS[d].to_string(), text });
        i += 1;
    }
    docs
}

/// Agreement minimal pairs over the desk lexicon: each pair differs only in
/// the verb or copula form.
pub fn minimal_pairs(seed: u64, n: usize) -> Vec<MinimalPair> {
    let lx = Lexicon::desk(seed);
    (0..n as u64)
        .map(|i| {
            let r = &mut substream(seed, &[label("desk/pairs"), i]);
            let (good, bad) = match i % 4 {
                0 => {
                    let (n, v, p, o) = (lx.noun(r).to_string(), lx.verb(r).clone(), pick(r, &PREPS), lx.noun(r).to_string());
                    (format!("The {n} {} {p} the {o}.", v.third), format!("The {n} {} {p} the {o}.", v.base))
                }
                1 => {
                    let (n, v, a) = (lx.nouns(r).to_string(), lx.verb(r).clone(), lx.adv(r).to_string());
                    (format!("The {n} {} {a}.", v.base), format!("The {n} {} {a}.", v.third))
                }
                2 => {
                    let (n, a) = (lx.noun(r).to_string(), lx.adj(r).to_string());
                    (format!("The {n} is {a}."), format!("The {n} are {a}."))
                }
                _ => {
                    let (n, a) = (lx.nouns(r).to_string(), lx.adj(r).to_string());
                    (format!("The {n} are {a}."), format!("The {n} is {a}."))
                }
            };
            MinimalPair { good, bad }
        })
        .collect()
}
