use crate::error::{LabError, Result};
use crate::geometry::{iou, BBox};
use crate::rng::LabRng;
use crate::world::vocab::{Relation, Vocab};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    pub n_classes: usize,
    pub n_colors: usize,
    /// Box side ranges: small objects in `[min_side, size_split)`, large in
    /// `[size_split, max_side]`.
    pub min_side: f64,
    pub size_split: f64,
    pub max_side: f64,
    /// Largest pairwise IoU allowed between two objects of one scene.
    pub max_overlap: f64,
    pub max_tries: usize,
    /// Minimum center offset on the relation axis for a relation to hold.
    pub relation_margin: f64,
    /// Sampling weights of the four question families (attribute,
    /// relational object, existence, relational existence).
    pub family_weights: [f64; 4],
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            min_objects: 4,
            max_objects: 9,
            n_classes: 24,
            n_colors: 8,
            min_side: 0.08,
            size_split: 0.14,
            max_side: 0.22,
            max_overlap: 0.1,
            max_tries: 200,
            relation_margin: 0.05,
            family_weights: [0.25, 0.25, 0.25, 0.25],
        }
    }
}

impl WorldConfig {
    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.n_classes, self.n_colors)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(LabError::Config {
                key: format!("world.{key}"),
                message: message.into(),
            })
        };
        if self.min_objects < 2 {
            return bad("min_objects", "scenes need at least 2 objects");
        }
        if self.max_objects < self.min_objects {
            return bad("max_objects", "must be >= min_objects");
        }
        if self.n_classes < 4 || self.n_classes > 24 || self.n_classes % 4 != 0 {
            return bad("n_classes", "must be a multiple of 4 in [4, 24]");
        }
        if !(2..=8).contains(&self.n_colors) {
            return bad("n_colors", "must be in [2, 8]");
        }
        if !(self.min_side > 0.0 && self.min_side < self.size_split && self.size_split < self.max_side && self.max_side < 1.0) {
            return bad("size_split", "need 0 < min_side < size_split < max_side < 1");
        }
        if !(0.0..=1.0).contains(&self.max_overlap) {
            return bad("max_overlap", "must be in [0, 1]");
        }
        if self.max_tries == 0 {
            return bad("max_tries", "must be positive");
        }
        if !(0.0..0.5).contains(&self.relation_margin) {
            return bad("relation_margin", "must be in [0, 0.5)");
        }
        if self.family_weights.iter().any(|w| !w.is_finite() || *w < 0.0)
            || self.family_weights.iter().sum::<f64>() <= 0.0
        {
            return bad("family_weights", "must be non-negative with a positive sum");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: usize,
    pub class: usize,
    pub color: usize,
    pub size: usize,
    pub bbox: BBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: u64,
    pub objects: Vec<SceneObject>,
}

/// Signed center offset for `relation(subject, anchor)`: positive when the
/// relation holds, negative when its inverse does.
pub fn relation_delta(relation: Relation, subject: &BBox, anchor: &BBox) -> f64 {
    let (sx, sy) = subject.center();
    let (ax, ay) = anchor.center();
    match relation {
        Relation::LeftOf => ax - sx,
        Relation::RightOf => sx - ax,
        // image coordinates: y grows downwards
        Relation::Above => ay - sy,
        Relation::Below => sy - ay,
    }
}

impl Scene {
    pub fn object(&self, id: usize) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn objects_of_class(&self, class: usize) -> impl Iterator<Item = &SceneObject> {
        self.objects.iter().filter(move |o| o.class == class)
    }

    pub fn relation_holds(&self, relation: Relation, subject: usize, anchor: usize, margin: f64) -> bool {
        match (self.object(subject), self.object(anchor)) {
            (Some(s), Some(a)) if subject != anchor => relation_delta(relation, &s.bbox, &a.bbox) >= margin,
            _ => false,
        }
    }

    /// Every `(subject, relation, anchor)` triple that holds in the scene.
    pub fn relations(&self, margin: f64) -> Vec<(usize, Relation, usize)> {
        let mut out = Vec::new();
        for s in &self.objects {
            for a in &self.objects {
                for r in Relation::ALL {
                    if self.relation_holds(r, s.id, a.id, margin) {
                        out.push((s.id, r, a.id));
                    }
                }
            }
        }
        out
    }
}

/// Places objects by rejection sampling so every pairwise IoU stays at or
/// below `cfg.max_overlap`.
pub fn generate_scene(cfg: &WorldConfig, id: u64, rng: &mut LabRng) -> Result<Scene> {
    let n = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(n);
    for oid in 0..n {
        let class = rng.random_range(0..cfg.n_classes);
        let color = rng.random_range(0..cfg.n_colors);
        let size = rng.random_range(0..2usize);
        let (lo, hi) = if size == 0 {
            (cfg.min_side, cfg.size_split)
        } else {
            (cfg.size_split, cfg.max_side)
        };
        let mut placed = None;
        for _ in 0..cfg.max_tries {
            let w = rng.random_range(lo..hi);
            let h = rng.random_range(lo..hi);
            let x1 = rng.random_range(0.0..1.0 - w);
            let y1 = rng.random_range(0.0..1.0 - h);
            let b = BBox::new(x1, y1, x1 + w, y1 + h);
            if objects.iter().all(|o| iou(&o.bbox, &b) <= cfg.max_overlap) {
                placed = Some(b);
                break;
            }
        }
        let bbox = placed.ok_or_else(|| {
            LabError::Generation(format!("scene {id}: could not place object {oid} in {} tries", cfg.max_tries))
        })?;
        objects.push(SceneObject {
            id: oid,
            class,
            color,
            size,
            bbox,
        });
    }
    Ok(Scene { id, objects })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn fixed_count_range() {
        let cfg = WorldConfig {
            min_objects: 2,
            max_objects: 2,
            ..WorldConfig::default()
        };
        let s = generate_scene(&cfg, 0, &mut rng::stream(5, "scene", 0)).unwrap();
        assert_eq!(s.objects.len(), 2);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = WorldConfig::default();
        let a = generate_scene(&cfg, 3, &mut rng::stream(11, "scene", 3)).unwrap();
        let b = generate_scene(&cfg, 3, &mut rng::stream(11, "scene", 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overlap_bound_over_many_scenes() {
        let cfg = WorldConfig::default();
        let mut made = 0;
        for i in 0..1000 {
            let Ok(s) = generate_scene(&cfg, i, &mut rng::stream(2, "scene", i)) else { continue };
            made += 1;
            for a in &s.objects {
                assert!(a.bbox.is_valid());
                for b in &s.objects {
                    if a.id != b.id {
                        assert!(iou(&a.bbox, &b.bbox) <= cfg.max_overlap);
                    }
                }
            }
        }
        assert!(made > 990);
    }

    #[test]
    fn placement_failure_is_reported() {
        let cfg = WorldConfig {
            min_objects: 9,
            max_objects: 9,
            min_side: 0.6,
            size_split: 0.7,
            max_side: 0.8,
            max_overlap: 0.0,
            max_tries: 5,
            ..WorldConfig::default()
        };
        let r = generate_scene(&cfg, 0, &mut rng::stream(0, "scene", 0));
        assert!(matches!(r, Err(LabError::Generation(_))));
    }

    #[test]
    fn relations_antisymmetric() {
        let cfg = WorldConfig::default();
        for i in 0..200 {
            let s = generate_scene(&cfg, i, &mut rng::stream(4, "scene", i)).unwrap();
            for a in &s.objects {
                for b in &s.objects {
                    assert_eq!(
                        s.relation_holds(Relation::LeftOf, a.id, b.id, 0.05),
                        s.relation_holds(Relation::RightOf, b.id, a.id, 0.05)
                    );
                    assert_eq!(
                        s.relation_holds(Relation::Above, a.id, b.id, 0.05),
                        s.relation_holds(Relation::Below, b.id, a.id, 0.05)
                    );
                }
            }
        }
    }
}
