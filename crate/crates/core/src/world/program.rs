//! Functional programs over scenes and the question templates built on them.

use crate::error::{LabError, Result};
use crate::rng::LabRng;
use crate::world::scene::{relation_delta, Scene, WorldConfig};
use crate::world::vocab::{Relation, Vocab};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// One step of a program. Programs run left to right over a working set of
/// object ids, with a single save slot for two-object comparisons.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Step {
    /// Working set ← all objects of `class`.
    Select { class: usize },
    /// Requires exactly one object in the working set; binds it.
    Unique,
    /// Working set ← objects standing in `relation` to the single bound object.
    Relate { relation: Relation },
    FilterFamily { family: usize },
    /// Moves the bound object into the save slot.
    Save,
    QueryColor,
    QueryClass,
    Exists,
    /// Does `relation(working object, saved object)` hold?
    Verify { relation: Relation },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub steps: Vec<Step>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionFamily {
    /// what color is the ⟨class⟩
    Attribute,
    /// what ⟨family⟩ is ⟨relation⟩ the ⟨class⟩
    RelationalObject,
    /// is there a ⟨class⟩
    Existence,
    /// is the ⟨class⟩ ⟨relation⟩ the ⟨class⟩
    RelationalExistence,
}

impl QuestionFamily {
    pub const ALL: [QuestionFamily; 4] = [
        QuestionFamily::Attribute,
        QuestionFamily::RelationalObject,
        QuestionFamily::Existence,
        QuestionFamily::RelationalExistence,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            QuestionFamily::Attribute => "a",
            QuestionFamily::RelationalObject => "b",
            QuestionFamily::Existence => "c",
            QuestionFamily::RelationalExistence => "d",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Binary,
    Open,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaInstance {
    pub id: u64,
    pub scene_id: u64,
    pub family: QuestionFamily,
    pub tokens: Vec<usize>,
    pub program: Program,
    pub answer: usize,
    pub category: Category,
    /// Ids of the objects the program binds (o*), ascending.
    pub necessary: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Execution {
    pub answer: usize,
    pub touched: Vec<usize>,
}

impl Program {
    pub fn execute(&self, scene: &Scene, vocab: &Vocab, margin: f64) -> Result<Execution> {
        let mut working: Vec<usize> = Vec::new();
        let mut bound: Option<usize> = None;
        let mut saved: Option<usize> = None;
        let mut touched: Vec<usize> = Vec::new();
        let mut answer = None;
        let single = |bound: Option<usize>, what: &str| {
            bound.ok_or_else(|| LabError::Program(format!("{what} needs a bound object")))
        };
        for step in &self.steps {
            if answer.is_some() {
                return Err(LabError::Program("steps after the answer".into()));
            }
            match step {
                Step::Select { class } => {
                    working = scene.objects_of_class(*class).map(|o| o.id).collect();
                    bound = None;
                }
                Step::Unique => match working.as_slice() {
                    [id] => {
                        bound = Some(*id);
                        touched.push(*id);
                    }
                    [] => return Err(LabError::Program("reference matches no object".into())),
                    _ => {
                        return Err(LabError::Program(format!(
                            "ambiguous reference: {} objects match",
                            working.len()
                        )))
                    }
                },
                Step::Relate { relation } => {
                    let anchor = single(bound, "relate")?;
                    working = scene
                        .objects
                        .iter()
                        .filter(|o| scene.relation_holds(*relation, o.id, anchor, margin))
                        .map(|o| o.id)
                        .collect();
                    bound = None;
                }
                Step::FilterFamily { family } => {
                    working.retain(|id| vocab.family_of(scene.object(*id).expect("id from scene").class) == *family);
                    bound = None;
                }
                Step::Save => {
                    saved = Some(single(bound, "save")?);
                    bound = None;
                }
                Step::QueryColor => {
                    let id = single(bound, "query_color")?;
                    answer = Some(vocab.answer_for_color(scene.object(id).expect("bound").color));
                }
                Step::QueryClass => {
                    let id = single(bound, "query_class")?;
                    answer = Some(vocab.answer_for_class(scene.object(id).expect("bound").class));
                }
                Step::Exists => {
                    touched.extend(working.iter().copied());
                    answer = Some(if working.is_empty() {
                        vocab.answer_no()
                    } else {
                        vocab.answer_yes()
                    });
                }
                Step::Verify { relation } => {
                    let subject = single(bound, "verify")?;
                    let anchor = saved.ok_or_else(|| LabError::Program("verify needs a saved object".into()))?;
                    answer = Some(if scene.relation_holds(*relation, subject, anchor, margin) {
                        vocab.answer_yes()
                    } else {
                        vocab.answer_no()
                    });
                }
            }
        }
        let answer = answer.ok_or_else(|| LabError::Program("program produced no answer".into()))?;
        touched.sort_unstable();
        touched.dedup();
        Ok(Execution { answer, touched })
    }
}

fn unique_class_objects(scene: &Scene) -> Vec<usize> {
    scene
        .objects
        .iter()
        .filter(|o| scene.objects_of_class(o.class).count() == 1)
        .map(|o| o.id)
        .collect()
}

fn class_word(vocab: &Vocab, scene: &Scene, id: usize) -> &'static str {
    vocab.class_name(scene.object(id).expect("id").class)
}

fn attribute(scene: &Scene, vocab: &Vocab, rng: &mut LabRng) -> Option<(Program, Vec<&'static str>)> {
    let &id = unique_class_objects(scene).choose(rng)?;
    let class = scene.object(id).expect("id").class;
    let program = Program {
        steps: vec![Step::Select { class }, Step::Unique, Step::QueryColor],
    };
    let words = vec!["what", "color", "is", "the", vocab.class_name(class)];
    Some((program, words))
}

fn relational_object(
    scene: &Scene,
    vocab: &Vocab,
    margin: f64,
    rng: &mut LabRng,
) -> Option<(Program, Vec<&'static str>)> {
    let mut options = Vec::new();
    for anchor in unique_class_objects(scene) {
        let ab = scene.object(anchor).expect("id").bbox;
        for relation in Relation::ALL {
            for family in 0..vocab.n_families() {
                let members: Vec<_> = scene
                    .objects
                    .iter()
                    .filter(|o| o.id != anchor && vocab.family_of(o.class) == family)
                    .collect();
                let deltas: Vec<f64> = members.iter().map(|o| relation_delta(relation, &o.bbox, &ab)).collect();
                let hits = deltas.iter().filter(|&&d| d >= margin).count();
                let clear = deltas.iter().all(|&d| d >= margin || d <= -margin);
                if hits == 1 && clear {
                    options.push((anchor, relation, family));
                }
            }
        }
    }
    let &(anchor, relation, family) = options.choose(rng)?;
    let class = scene.object(anchor).expect("id").class;
    let program = Program {
        steps: vec![
            Step::Select { class },
            Step::Unique,
            Step::Relate { relation },
            Step::FilterFamily { family },
            Step::Unique,
            Step::QueryClass,
        ],
    };
    let mut words = vec!["what", vocab.family_name(family), "is"];
    words.extend_from_slice(relation.words());
    words.extend_from_slice(&["the", vocab.class_name(class)]);
    Some((program, words))
}

fn existence(scene: &Scene, vocab: &Vocab, rng: &mut LabRng) -> Option<(Program, Vec<&'static str>)> {
    let present = unique_class_objects(scene);
    let absent: Vec<usize> = (0..vocab.n_classes())
        .filter(|c| scene.objects_of_class(*c).next().is_none())
        .collect();
    let want_yes = rng.random_bool(0.5);
    let class = match (want_yes, present.is_empty(), absent.is_empty()) {
        (true, false, _) | (false, false, true) => scene.object(*present.choose(rng)?).expect("id").class,
        (_, _, false) => *absent.choose(rng)?,
        _ => return None,
    };
    let program = Program {
        steps: vec![Step::Select { class }, Step::Exists],
    };
    Some((program, vec!["is", "there", "a", vocab.class_name(class)]))
}

fn relational_existence(
    scene: &Scene,
    vocab: &Vocab,
    margin: f64,
    rng: &mut LabRng,
) -> Option<(Program, Vec<&'static str>)> {
    let unique = unique_class_objects(scene);
    let mut yes = Vec::new();
    let mut no = Vec::new();
    for &s in &unique {
        for &a in &unique {
            if s == a {
                continue;
            }
            let (sb, ab) = (scene.object(s).expect("id").bbox, scene.object(a).expect("id").bbox);
            for relation in Relation::ALL {
                let d = relation_delta(relation, &sb, &ab);
                if d >= margin {
                    yes.push((s, relation, a));
                } else if d <= -margin {
                    no.push((s, relation, a));
                }
            }
        }
    }
    let pool = match (rng.random_bool(0.5), yes.is_empty(), no.is_empty()) {
        (true, false, _) | (false, _, true) => &yes,
        _ => &no,
    };
    let &(subject, relation, anchor) = pool.choose(rng)?;
    let (sc, ac) = (scene.object(subject).expect("id").class, scene.object(anchor).expect("id").class);
    let program = Program {
        steps: vec![
            Step::Select { class: ac },
            Step::Unique,
            Step::Save,
            Step::Select { class: sc },
            Step::Unique,
            Step::Verify { relation },
        ],
    };
    let mut words = vec!["is", "the", class_word(vocab, scene, subject)];
    words.extend_from_slice(relation.words());
    words.extend_from_slice(&["the", class_word(vocab, scene, anchor)]);
    Some((program, words))
}

/// Instantiates one template family on `scene`. The family is drawn by
/// `cfg.family_weights`; inapplicable families are skipped in random order.
pub fn generate_question(
    scene: &Scene,
    cfg: &WorldConfig,
    vocab: &Vocab,
    id: u64,
    rng: &mut LabRng,
) -> Result<QaInstance> {
    let total: f64 = cfg.family_weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    let mut first = 3;
    for (i, w) in cfg.family_weights.iter().enumerate() {
        if u < *w {
            first = i;
            break;
        }
        u -= w;
    }
    let mut order: Vec<usize> = (0..4).filter(|&i| i != first && cfg.family_weights[i] > 0.0).collect();
    order.shuffle(rng);
    order.insert(0, first);
    for fi in order {
        let family = QuestionFamily::ALL[fi];
        let built = match family {
            QuestionFamily::Attribute => attribute(scene, vocab, rng),
            QuestionFamily::RelationalObject => relational_object(scene, vocab, cfg.relation_margin, rng),
            QuestionFamily::Existence => existence(scene, vocab, rng),
            QuestionFamily::RelationalExistence => relational_existence(scene, vocab, cfg.relation_margin, rng),
        };
        let Some((program, words)) = built else { continue };
        let exec = program.execute(scene, vocab, cfg.relation_margin)?;
        let category = if vocab.is_binary_answer(exec.answer) {
            Category::Binary
        } else {
            Category::Open
        };
        return Ok(QaInstance {
            id,
            scene_id: scene.id,
            family,
            tokens: vocab.encode(&words),
            program,
            answer: exec.answer,
            category,
            necessary: exec.touched,
        });
    }
    Err(LabError::Generation(format!("scene {}: no applicable question template", scene.id)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::rng;
    use crate::world::scene::{generate_scene, SceneObject};

    fn obj(id: usize, class: usize, color: usize, x: f64, y: f64) -> SceneObject {
        SceneObject {
            id,
            class,
            color,
            size: 0,
            bbox: BBox::new(x, y, x + 0.1, y + 0.1),
        }
    }

    fn vocab() -> Vocab {
        Vocab::new(24, 8)
    }

    #[test]
    fn exists_absent_class() {
        let scene = Scene {
            id: 0,
            objects: vec![obj(0, 0, 1, 0.1, 0.1), obj(1, 5, 2, 0.6, 0.6)],
        };
        let p = Program {
            steps: vec![Step::Select { class: 9 }, Step::Exists],
        };
        let e = p.execute(&scene, &vocab(), 0.05).unwrap();
        assert_eq!(e.answer, vocab().answer_no());
        assert!(e.touched.is_empty());
    }

    #[test]
    fn query_color_of_unique_class() {
        let scene = Scene {
            id: 0,
            objects: vec![obj(0, 3, 6, 0.1, 0.1), obj(1, 5, 2, 0.6, 0.6)],
        };
        let p = Program {
            steps: vec![Step::Select { class: 3 }, Step::Unique, Step::QueryColor],
        };
        let e = p.execute(&scene, &vocab(), 0.05).unwrap();
        assert_eq!(e.answer, vocab().answer_for_color(6));
        assert_eq!(e.touched, vec![0]);
    }

    #[test]
    fn ambiguous_reference_is_an_error() {
        let scene = Scene {
            id: 0,
            objects: vec![obj(0, 3, 6, 0.1, 0.1), obj(1, 3, 2, 0.6, 0.6)],
        };
        let p = Program {
            steps: vec![Step::Select { class: 3 }, Step::Unique, Step::QueryColor],
        };
        assert!(matches!(p.execute(&scene, &vocab(), 0.05), Err(LabError::Program(_))));
    }

    #[test]
    fn relate_left_chain_on_constructed_scene() {
        // laptop (device) at x=0.1, lamp at x=0.45, phone (device) at x=0.8.
        // The only device left of the lamp is the laptop.
        let v = vocab();
        let scene = Scene {
            id: 0,
            objects: vec![obj(0, 4, 0, 0.1, 0.4), obj(1, 8, 1, 0.45, 0.4), obj(2, 5, 2, 0.8, 0.4)],
        };
        let p = Program {
            steps: vec![
                Step::Select { class: 8 },
                Step::Unique,
                Step::Relate {
                    relation: Relation::LeftOf,
                },
                Step::FilterFamily { family: 1 },
                Step::Unique,
                Step::QueryClass,
            ],
        };
        let e = p.execute(&scene, &v, 0.05).unwrap();
        assert_eq!(v.answer_name(e.answer), "laptop");
        // lamp and the indirectly mentioned laptop
        assert_eq!(e.touched, vec![0, 1]);
    }

    #[test]
    fn existence_family_positive() {
        let v = vocab();
        let cfg = WorldConfig {
            family_weights: [0.0, 0.0, 1.0, 0.0],
            ..WorldConfig::default()
        };
        let scene = Scene {
            id: 0,
            objects: vec![obj(0, 3, 6, 0.1, 0.1), obj(1, 5, 2, 0.6, 0.6)],
        };
        let mut saw_yes = false;
        for i in 0..50 {
            let qa = generate_question(&scene, &cfg, &v, i, &mut rng::stream(1, "q", i)).unwrap();
            assert_eq!(qa.family, QuestionFamily::Existence);
            if qa.answer == v.answer_yes() {
                saw_yes = true;
                assert_eq!(qa.necessary.len(), 1);
                let o = scene.object(qa.necessary[0]).unwrap();
                assert_eq!(v.decode(&qa.tokens), format!("is there a {}", v.class_name(o.class)));
            } else {
                assert!(qa.necessary.is_empty());
            }
        }
        assert!(saw_yes);
    }

    #[test]
    fn generated_questions_reexecute_to_stored_answer() {
        let cfg = WorldConfig::default();
        let v = cfg.vocab();
        let mut families = [0usize; 4];
        let mut generated = 0;
        let mut i = 0u64;
        while generated < 10_000 {
            i += 1;
            let Ok(scene) = generate_scene(&cfg, i, &mut rng::stream(8, "scene", i)) else { continue };
            let qa = generate_question(&scene, &cfg, &v, i, &mut rng::stream(8, "question", i)).unwrap();
            let e = qa.program.execute(&scene, &v, cfg.relation_margin).unwrap();
            assert_eq!(e.answer, qa.answer);
            assert_eq!(e.touched, qa.necessary);
            assert_eq!(qa.category == Category::Binary, v.is_binary_answer(qa.answer));
            let negative_existence = qa.family == QuestionFamily::Existence && qa.answer == v.answer_no();
            assert_eq!(qa.necessary.is_empty(), negative_existence);
            if qa.family == QuestionFamily::RelationalObject {
                assert_eq!(qa.necessary.len(), 2);
            }
            families[QuestionFamily::ALL.iter().position(|f| *f == qa.family).unwrap()] += 1;
            generated += 1;
        }
        assert!(families.iter().all(|&n| n > 1500), "{families:?}");
    }
}
