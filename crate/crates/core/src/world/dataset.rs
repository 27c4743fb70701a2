use crate::error::{LabError, Result};
use crate::io;
use crate::rng;
use crate::world::program::{generate_question, Category, QaInstance, QuestionFamily};
use crate::world::scene::{generate_scene, Scene, WorldConfig};
use crate::world::vocab::Vocab;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

/// Scene attempts per id before giving up.
const MAX_SCENE_ATTEMPTS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 3000,
            val: 600,
            test: 600,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub name: String,
    pub scenes: Vec<Scene>,
    pub questions: Vec<QaInstance>,
    scene_index: HashMap<u64, usize>,
}

impl Split {
    pub fn new(name: &str, scenes: Vec<Scene>, questions: Vec<QaInstance>) -> Result<Split> {
        let scene_index: HashMap<u64, usize> = scenes.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
        if let Some(q) = questions.iter().find(|q| !scene_index.contains_key(&q.scene_id)) {
            return Err(LabError::Format(format!(
                "split {name}: question {} refers to missing scene {}",
                q.id, q.scene_id
            )));
        }
        Ok(Split {
            name: name.into(),
            scenes,
            questions,
            scene_index,
        })
    }

    pub fn scene(&self, id: u64) -> &Scene {
        &self.scenes[self.scene_index[&id]]
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&Scene, &QaInstance)> {
        self.questions.iter().map(|q| (self.scene(q.scene_id), q))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub sizes: SplitSizes,
    pub world: WorldConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub vocab: Vocab,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnswerReport {
    pub split: String,
    pub total: usize,
    pub binary: usize,
    pub open: usize,
    pub by_family: BTreeMap<String, usize>,
    pub by_answer: BTreeMap<String, usize>,
    pub mean_necessary: f64,
}

pub fn answer_report(split: &Split, vocab: &Vocab) -> AnswerReport {
    let mut r = AnswerReport {
        split: split.name.clone(),
        total: split.len(),
        ..AnswerReport::default()
    };
    let mut necessary = 0;
    for q in &split.questions {
        match q.category {
            Category::Binary => r.binary += 1,
            Category::Open => r.open += 1,
        }
        *r.by_family.entry(q.family.tag().to_string()).or_default() += 1;
        *r.by_answer.entry(vocab.answer_name(q.answer).to_string()).or_default() += 1;
        necessary += q.necessary.len();
    }
    r.mean_necessary = if r.total == 0 {
        0.0
    } else {
        necessary as f64 / r.total as f64
    };
    r
}

fn build_split(name: &str, world: &WorldConfig, vocab: &Vocab, seed: u64, first_id: u64, n: usize) -> Result<Split> {
    let mut scenes = Vec::with_capacity(n);
    let mut questions = Vec::with_capacity(n);
    for id in first_id..first_id + n as u64 {
        let mut srng = rng::stream(seed, "scene", id);
        let mut qrng = rng::stream(seed, "question", id);
        let mut last_err = None;
        let mut made = None;
        for _ in 0..MAX_SCENE_ATTEMPTS {
            // retries keep drawing from the same stream
            let attempt = generate_scene(world, id, &mut srng)
                .and_then(|s| generate_question(&s, world, vocab, id, &mut qrng).map(|q| (s, q)));
            match attempt {
                Ok(pair) => {
                    made = Some(pair);
                    break;
                }
                Err(e @ LabError::Generation(_)) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        let (scene, qa) = made.ok_or_else(|| last_err.expect("at least one attempt"))?;
        scenes.push(scene);
        questions.push(qa);
    }
    Split::new(name, scenes, questions)
}

/// Builds train/val/test with one question per scene. Scene ids are
/// sequential across splits, so splits never share a scene.
pub fn build_dataset(world: &WorldConfig, sizes: SplitSizes, seed: u64) -> Result<Dataset> {
    world.validate()?;
    for (key, n) in [("train", sizes.train), ("val", sizes.val), ("test", sizes.test)] {
        if n == 0 {
            return Err(LabError::Config {
                key: format!("data.{key}"),
                message: "split size must be positive".into(),
            });
        }
    }
    let vocab = world.vocab();
    let train = build_split("train", world, &vocab, seed, 0, sizes.train)?;
    let val = build_split("val", world, &vocab, seed, sizes.train as u64, sizes.val)?;
    let test = build_split("test", world, &vocab, seed, (sizes.train + sizes.val) as u64, sizes.test)?;
    Ok(Dataset {
        meta: DatasetMeta {
            seed,
            sizes,
            world: world.clone(),
        },
        vocab,
        train,
        val,
        test,
    })
}

impl Dataset {
    pub fn splits(&self) -> [&Split; 3] {
        [&self.train, &self.val, &self.test]
    }

    pub fn reports(&self) -> Vec<AnswerReport> {
        self.splits().iter().map(|s| answer_report(s, &self.vocab)).collect()
    }

    /// Writes `dataset.json`, `{split}_scenes.jsonl`, `{split}_questions.jsonl`
    /// and `answer_report.json` into `dir`. Returns the written file names.
    pub fn save(&self, dir: &Path) -> Result<Vec<String>> {
        let mut files = vec!["dataset.json".to_string()];
        io::write_json(&dir.join("dataset.json"), &self.meta)?;
        for split in self.splits() {
            let s = format!("{}_scenes.jsonl", split.name);
            let q = format!("{}_questions.jsonl", split.name);
            io::write_jsonl(&dir.join(&s), &split.scenes)?;
            io::write_jsonl(&dir.join(&q), &split.questions)?;
            files.push(s);
            files.push(q);
        }
        io::write_json(&dir.join("answer_report.json"), &self.reports())?;
        files.push("answer_report.json".into());
        Ok(files)
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let meta: DatasetMeta = io::read_json(&dir.join("dataset.json"))?;
        meta.world.validate()?;
        let load = |name: &str| -> Result<Split> {
            let scenes = io::read_jsonl(&dir.join(format!("{name}_scenes.jsonl")))?;
            let questions = io::read_jsonl(&dir.join(format!("{name}_questions.jsonl")))?;
            Split::new(name, scenes, questions)
        };
        let vocab = meta.world.vocab();
        let ds = Dataset {
            train: load("train")?,
            val: load("val")?,
            test: load("test")?,
            vocab,
            meta,
        };
        for split in ds.splits() {
            for q in &split.questions {
                if let Some(&t) = q.tokens.iter().find(|&&t| t >= ds.vocab.n_words()) {
                    return Err(LabError::Vocabulary {
                        token: t,
                        size: ds.vocab.n_words(),
                    });
                }
                if q.answer >= ds.vocab.n_answers() {
                    return Err(LabError::Format(format!("question {}: answer {} out of range", q.id, q.answer)));
                }
            }
        }
        Ok(ds)
    }

    /// Instances of one family in a split.
    pub fn family<'a>(split: &'a Split, family: QuestionFamily) -> impl Iterator<Item = &'a QaInstance> {
        split.questions.iter().filter(move |q| q.family == family)
    }
}
