//! Template-driven dialogue simulator for tests, smoke runs and the
//! experiment grid.
//!
//! A simulated user books a hotel or a restaurant; the system requests
//! missing constraints, proposes a venue, books it or reports no match. Every
//! turn carries its own annotations (entity count, system acts, user state),
//! so all four downstream datasets and an annotated pre-training corpus are
//! derived from the same dialogues.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::downstream::{ActRecord, DownstreamRecords, IntentRecord, Ontology, ResponseRecord, StateRecord};
use crate::corpus::{Corpus, Dialogue, Split, Utterance};
use crate::seed::{rng_for, Rng as SeededRng};
use crate::task::DownstreamTask;
use crate::trainer::{DownstreamData, DEFAULT_OOS_LABEL, NONE_VALUE, RS_POOL};

const AREAS: &[&str] = &["north", "south", "east", "west", "centre"];
const PRICES: &[&str] = &["cheap", "moderate", "expensive"];
const FOODS: &[&str] = &["italian", "chinese", "indian", "british", "french", "thai"];
const HOTELS: &[&str] = &[
    "Acorn House", "Alpha Lodge", "Bridge Inn", "Cambridge Belfry", "Carolina Rooms", "Finches Stay",
    "Gonville Hotel", "Hamilton Lodge", "Lensfield Hotel", "Worth House",
];
const RESTAURANTS: &[&str] = &[
    "Bedouin", "Curry Garden", "Golden Wok", "Hotpot", "La Margherita", "Meze Bar", "Pipasha",
    "Saigon City", "The Nirala", "Zizzi",
];
const DAYS: &[&str] = &["monday", "tuesday", "friday", "saturday", "sunday"];

const OOS_TEMPLATES: &[&str] = &[
    "what is the weather like in {x}",
    "can you play some {x} music",
    "how do i reset my {x} password",
    "tell me a joke about {x}",
    "what is the exchange rate for the {x}",
    "remind me to call {x} tomorrow",
];
const OOS_FILLERS: &[&str] = &["paris", "jazz", "bank", "cats", "euro", "mum", "tokyo", "email"];

/// Pairs tracked by the simulated state tracker.
pub fn ontology() -> Ontology {
    let with_none = |vals: &[&str]| {
        std::iter::once(NONE_VALUE)
            .chain(vals.iter().copied())
            .map(str::to_string)
            .collect::<Vec<_>>()
    };
    [
        ("hotel-area", with_none(AREAS)),
        ("hotel-pricerange", with_none(PRICES)),
        ("restaurant-area", with_none(AREAS)),
        ("restaurant-food", with_none(FOODS)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Intent labels produced for single utterances, out-of-scope last.
pub fn intents() -> Vec<String> {
    ["find_hotel", "find_restaurant", "book", "thank", DEFAULT_OOS_LABEL]
        .map(str::to_string)
        .to_vec()
}

#[derive(Debug, Clone, PartialEq)]
struct Turn {
    utterance: Utterance,
    /// System acts; empty for user turns.
    acts: Vec<String>,
    /// Accumulated user constraints after this turn.
    state: BTreeMap<String, String>,
    /// Intent of a user turn.
    intent: Option<&'static str>,
}

/// One simulated dialogue with per-turn annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDialogue {
    pub id: String,
    domain: &'static str,
    turns: Vec<Turn>,
}

impl SimDialogue {
    pub fn dialogue(&self) -> Dialogue {
        Dialogue {
            id: self.id.clone(),
            domain: Some(self.domain.to_string()),
            utterances: self.utterances(),
        }
    }

    fn utterances(&self) -> Vec<Utterance> {
        self.turns.iter().map(|t| t.utterance.clone()).collect()
    }
}

fn pick<'a>(rng: &mut SeededRng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().expect("non-empty lexicon")
}

struct Sim<'r> {
    rng: &'r mut SeededRng,
    turns: Vec<Turn>,
    state: BTreeMap<String, String>,
}

impl Sim<'_> {
    fn user(&mut self, text: String, entities: u32, intent: &'static str) {
        self.turns.push(Turn {
            utterance: Utterance {
                entity_count: Some(entities),
                ..Utterance::user(text)
            },
            acts: Vec::new(),
            state: self.state.clone(),
            intent: Some(intent),
        });
    }

    fn system(&mut self, text: String, entities: u32, acts: &[&str]) {
        let mut acts: Vec<String> = acts.iter().map(|a| a.to_string()).collect();
        acts.sort();
        self.turns.push(Turn {
            utterance: Utterance {
                entity_count: Some(entities),
                ..Utterance::system(text)
            },
            acts,
            state: self.state.clone(),
            intent: None,
        });
    }

    fn set(&mut self, pair: &str, value: &str) {
        self.state.insert(pair.to_string(), value.to_string());
    }
}

fn simulate(seed: u64, id: &str) -> SimDialogue {
    let mut rng = rng_for(seed, &format!("synthetic/{id}"));
    let hotel = rng.gen_bool(0.5);
    let (domain, slot_a, slot_b, values_b, venues) = if hotel {
        ("hotel", "area", "pricerange", PRICES, HOTELS)
    } else {
        ("restaurant", "area", "food", FOODS, RESTAURANTS)
    };
    let area = pick(&mut rng, AREAS);
    let other = pick(&mut rng, values_b);
    let venue = pick(&mut rng, venues);
    let pair_a = format!("{domain}-{slot_a}");
    let pair_b = format!("{domain}-{slot_b}");
    let give_area_first = rng.gen_bool(0.5);
    let no_offer = rng.gen_bool(0.2);
    let people = rng.gen_range(1..=8u32);
    let day = pick(&mut rng, DAYS);
    let intent = if hotel { "find_hotel" } else { "find_restaurant" };
    let mut sim = Sim {
        rng: &mut rng,
        turns: Vec::new(),
        state: BTreeMap::new(),
    };

    // Opening request with one or two constraints.
    let both = sim.rng.gen_bool(0.4);
    if both {
        sim.set(&pair_a, area);
        sim.set(&pair_b, other);
        let text = if hotel {
            format!("i am looking for a {other} hotel in the {area}")
        } else {
            format!("i want {other} food in the {area} of town")
        };
        sim.user(text, 2, intent);
    } else if give_area_first {
        sim.set(&pair_a, area);
        sim.user(format!("can you find me a {domain} in the {area} please"), 1, intent);
        let (text, act) = if hotel {
            ("what price range would you like ?".to_string(), "request-pricerange")
        } else {
            ("what type of food are you interested in ?".to_string(), "request-food")
        };
        sim.system(text, 0, &[act]);
        sim.set(&pair_b, other);
        let text = if hotel {
            format!("something {other} would be great")
        } else {
            format!("{other} food please")
        };
        sim.user(text, 1, intent);
    } else {
        sim.set(&pair_b, other);
        let text = if hotel {
            format!("i need a {other} place to stay")
        } else {
            format!("i am hungry for some {other} food")
        };
        sim.user(text, 1, intent);
        sim.system("which area of town do you prefer ?".into(), 0, &["request-area"]);
        sim.set(&pair_a, area);
        sim.user(format!("the {area} please"), 1, intent);
    }

    if no_offer {
        let text = if hotel {
            format!("sorry , there is no {other} hotel in the {area} .")
        } else {
            format!("sorry , there is no {other} restaurant in the {area} .")
        };
        sim.system(text, 2, &["nooffer"]);
        sim.user("ok , thank you anyway".into(), 0, "thank");
        sim.system("you are welcome , goodbye .".into(), 0, &["bye"]);
    } else {
        let text = if hotel {
            format!("{venue} is a {other} hotel in the {area} . shall i book it ?")
        } else {
            format!("{venue} serves {other} food in the {area} . shall i book it ?")
        };
        let inform_b = if hotel { "inform-pricerange" } else { "inform-food" };
        sim.system(text, 3, &["inform-name", "inform-area", inform_b, "offerbook"]);
        sim.user(format!("yes please book it for {people} people on {day}"), 2, "book");
        let reference = format!("{:08X}", sim.rng.gen::<u32>());
        sim.system(
            format!("booked {venue} for {people} on {day} . your reference is {reference} ."),
            4,
            &["book", "inform-ref"],
        );
        sim.user("thanks , that is all".into(), 0, "thank");
        let what = if hotel { "stay" } else { "meal" };
        sim.system(format!("enjoy your {what} , goodbye ."), 0, &["bye"]);
    }
    SimDialogue {
        id: id.to_string(),
        domain,
        turns: sim.turns,
    }
}

/// `n` simulated dialogues, ids `{prefix}-{i}`.
pub fn dialogues(prefix: &str, n: usize, seed: u64) -> Vec<SimDialogue> {
    (0..n).map(|i| simulate(seed, &format!("{prefix}-{i:05}"))).collect()
}

/// An annotated pre-training corpus of `n` dialogues.
pub fn pretrain_corpus(name: &str, n: usize, seed: u64) -> Corpus {
    Corpus {
        name: name.to_string(),
        dialogues: dialogues(name, n, seed).iter().map(SimDialogue::dialogue).collect(),
        split: Split::Train,
    }
}

fn oos_utterance(rng: &mut SeededRng) -> String {
    pick(rng, OOS_TEMPLATES).replace("{x}", pick(rng, OOS_FILLERS))
}

/// Records of one downstream task derived from `dialogues`. `limit` caps the
/// number of records.
fn records(task: DownstreamTask, dialogues: &[SimDialogue], limit: usize, seed: u64, key: &str) -> DownstreamRecords {
    match task {
        DownstreamTask::Int => {
            let mut rng = rng_for(seed, &format!("synthetic/int/{key}"));
            let mut out = Vec::new();
            for d in dialogues {
                for t in &d.turns {
                    if let Some(intent) = t.intent {
                        out.push(IntentRecord {
                            text: t.utterance.text.clone(),
                            intent: intent.to_string(),
                        });
                    }
                }
            }
            out.shuffle(&mut rng);
            // Roughly one out-of-scope utterance per five.
            let n = limit.min(out.len());
            let n_oos = (n / 5).max(1);
            out.truncate(n - n_oos.min(n));
            for _ in 0..n_oos {
                out.push(IntentRecord {
                    text: oos_utterance(&mut rng),
                    intent: DEFAULT_OOS_LABEL.to_string(),
                });
            }
            out.shuffle(&mut rng);
            DownstreamRecords::Int(out)
        }
        DownstreamTask::Da => {
            let mut out = Vec::new();
            for d in dialogues {
                for (i, t) in d.turns.iter().enumerate() {
                    if !t.acts.is_empty() {
                        out.push(ActRecord {
                            id: format!("{}/{i}", d.id),
                            turns: d.utterances()[..=i].to_vec(),
                            acts: t.acts.clone(),
                        });
                    }
                }
            }
            out.truncate(limit);
            DownstreamRecords::Da(out)
        }
        DownstreamTask::Rs => {
            let mut out = Vec::new();
            for d in dialogues {
                for (i, t) in d.turns.iter().enumerate() {
                    if !t.acts.is_empty() {
                        out.push(ResponseRecord {
                            id: format!("{}/{i}", d.id),
                            context: d.utterances()[..i].to_vec(),
                            response: t.utterance.text.clone(),
                            negatives: Vec::new(),
                        });
                    }
                }
            }
            out.truncate(limit);
            DownstreamRecords::Rs(out)
        }
        DownstreamTask::Dst => {
            let ont = ontology();
            let mut out = Vec::new();
            for d in dialogues {
                for (i, t) in d.turns.iter().enumerate() {
                    if t.intent.is_some() {
                        let state = t
                            .state
                            .iter()
                            .filter(|(k, _)| ont.contains_key(*k))
                            .map(|(k, v)| (k.clone(), v.clone()))
                            .collect();
                        out.push(StateRecord {
                            id: format!("{}/{i}", d.id),
                            turns: d.utterances()[..=i].to_vec(),
                            state,
                        });
                    }
                }
            }
            out.truncate(limit);
            DownstreamRecords::Dst(out)
        }
    }
}

/// Gives every response-selection test record 99 fixed negatives drawn from
/// a separate pool of simulated responses.
fn attach_negatives(records: &mut DownstreamRecords, seed: u64) {
    let DownstreamRecords::Rs(recs) = records else {
        return;
    };
    let pool: BTreeSet<String> = dialogues("rs-pool", 300, seed ^ 0x5eed)
        .iter()
        .flat_map(|d| d.turns.iter().filter(|t| !t.acts.is_empty()).map(|t| t.utterance.text.clone()))
        .collect();
    let pool: Vec<String> = pool.into_iter().collect();
    for r in recs.iter_mut() {
        let mut rng = rng_for(seed, &format!("synthetic/rs-negatives/{}", r.id));
        let mut cands: Vec<&String> = pool.iter().filter(|p| **p != r.response).collect();
        cands.shuffle(&mut rng);
        r.negatives = cands[..RS_POOL - 1].iter().map(|s| s.to_string()).collect();
    }
}

/// Sizes of the train/valid/test splits of a synthetic downstream dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 256,
            valid: 64,
            test: 64,
        }
    }
}

/// A complete synthetic downstream dataset. Splits come from disjoint
/// dialogue sets; test response-selection records carry their own 99
/// negatives.
pub fn downstream(task: DownstreamTask, dataset: &str, sizes: SplitSizes, seed: u64) -> DownstreamData {
    // Each dialogue yields at least two records of every task.
    let make = |split: &str, n: usize| {
        let sims = dialogues(&format!("{dataset}-{split}"), n.div_ceil(2).max(1), seed);
        records(task, &sims, n, seed, split)
    };
    let mut test = make("test", sizes.test);
    if task == DownstreamTask::Rs {
        attach_negatives(&mut test, seed);
    }
    DownstreamData {
        task,
        dataset: dataset.to_string(),
        train: make("train", sizes.train),
        valid: make("valid", sizes.valid),
        test,
        ontology: (task == DownstreamTask::Dst).then(ontology),
        oos_label: DEFAULT_OOS_LABEL.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dialogues_alternate_and_are_annotated() {
        for d in dialogues("t", 40, 3) {
            let dialogue = d.dialogue();
            dialogue.validate().unwrap();
            assert!(dialogue.is_annotated());
            for (i, u) in dialogue.utterances.iter().enumerate() {
                let expected = if i % 2 == 0 { crate::corpus::Speaker::User } else { crate::corpus::Speaker::System };
                assert_eq!(u.speaker, expected);
            }
        }
    }

    #[test]
    fn simulation_is_seeded() {
        assert_eq!(dialogues("x", 5, 9), dialogues("x", 5, 9));
        assert_ne!(dialogues("x", 5, 9), dialogues("x", 5, 10));
    }

    #[test]
    fn states_stay_inside_the_ontology() {
        let ont = ontology();
        let data = downstream(DownstreamTask::Dst, "s", SplitSizes::default(), 1);
        let DownstreamRecords::Dst(recs) = &data.train else { panic!() };
        assert_eq!(recs.len(), 256);
        for r in recs {
            for (k, v) in &r.state {
                assert!(ont[k].contains(v), "{k}={v}");
            }
        }
    }

    #[test]
    fn test_responses_carry_a_full_pool() {
        let data = downstream(DownstreamTask::Rs, "r", SplitSizes { train: 20, valid: 20, test: 10 }, 2);
        let DownstreamRecords::Rs(recs) = &data.test else { panic!() };
        for r in recs {
            assert_eq!(r.negatives.len(), RS_POOL - 1);
            assert!(!r.negatives.contains(&r.response));
        }
    }

    #[test]
    fn intent_data_contains_out_of_scope() {
        let data = downstream(DownstreamTask::Int, "i", SplitSizes::default(), 4);
        let DownstreamRecords::Int(recs) = &data.test else { panic!() };
        assert_eq!(recs.len(), 64);
        assert!(recs.iter().any(|r| r.intent == DEFAULT_OOS_LABEL));
        let labels: BTreeSet<_> = recs.iter().map(|r| r.intent.clone()).collect();
        assert!(labels.iter().all(|l| intents().contains(l)));
    }
}
