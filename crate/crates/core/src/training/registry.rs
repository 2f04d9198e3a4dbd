use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tensor};
use crate::fields::{CodeKind, LatentCode, ModelDims};
use crate::geometry::stream_rng;

use super::TrainError;

/// Offsets the code RNG streams away from the network initializer's.
const CODE_STREAM_BASE: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodeEntry {
    pub shape: ParamId,
    pub tex: ParamId,
    /// Trainable sin/cos orientation, present with pose conditioning.
    pub orientation: Option<ParamId>,
}

impl CodeEntry {
    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        [self.shape, self.tex].into_iter().chain(self.orientation)
    }
}

/// Per-instance latent codes, stored as parameters of the model so they are
/// optimized alongside the network weights. Order follows the dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentRegistry {
    ids: Vec<String>,
    entries: Vec<CodeEntry>,
}

/// Serializable description of a registry, enough to rebuild it against a
/// model's parameter names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistryLayout {
    pub instances: Vec<String>,
    pub pose: bool,
}

pub fn code_name(instance: &str, part: &str) -> String {
    format!("code.{instance}.{part}")
}

impl LatentRegistry {
    /// Registers fresh codes drawn from N(0, sigma²); orientations start at
    /// `(0, 1)`, the encoding of zero yaw.
    pub fn register(
        store: &mut ParamStore,
        instances: &[String],
        dims: ModelDims,
        pose: bool,
        sigma: f64,
        seed: u64,
    ) -> Result<Self, TrainError> {
        let normal = Normal::new(0.0, sigma).map_err(|e| TrainError::Config(e.to_string()))?;
        let mut entries = Vec::with_capacity(instances.len());
        for (i, id) in instances.iter().enumerate() {
            if store.id(&code_name(id, "shape")).is_some() {
                return Err(TrainError::Data(format!("instance {id:?} listed twice")));
            }
            let mut rng = stream_rng(seed, CODE_STREAM_BASE + i as u64);
            let mut draw = |d: usize| {
                Tensor::matrix(1, d, (0..d).map(|_| normal.sample(&mut rng)).collect()).expect("row")
            };
            let shape = store.register(code_name(id, "shape"), draw(dims.shape));
            let tex = store.register(code_name(id, "tex"), draw(dims.tex));
            let orientation = pose.then(|| {
                store.register(code_name(id, "orientation"), Tensor::from_rows(&[[0.0, 1.0]]))
            });
            entries.push(CodeEntry {
                shape,
                tex,
                orientation,
            });
        }
        Ok(Self {
            ids: instances.to_vec(),
            entries,
        })
    }

    /// Looks up an existing layout in `store`.
    pub fn attach(store: &ParamStore, layout: &RegistryLayout) -> Result<Self, TrainError> {
        let find = |name: String| {
            store
                .id(&name)
                .ok_or_else(|| TrainError::Checkpoint(format!("parameter {name} missing")))
        };
        let entries = layout
            .instances
            .iter()
            .map(|id| {
                Ok(CodeEntry {
                    shape: find(code_name(id, "shape"))?,
                    tex: find(code_name(id, "tex"))?,
                    orientation: if layout.pose {
                        Some(find(code_name(id, "orientation"))?)
                    } else {
                        None
                    },
                })
            })
            .collect::<Result<_, TrainError>>()?;
        Ok(Self {
            ids: layout.instances.clone(),
            entries,
        })
    }

    pub fn layout(&self) -> RegistryLayout {
        RegistryLayout {
            instances: self.ids.clone(),
            pose: self.entries.first().is_some_and(|e| e.orientation.is_some()),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn instance_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn entry(&self, index: usize) -> &CodeEntry {
        &self.entries[index]
    }

    pub fn index_of(&self, instance: &str) -> Result<usize, TrainError> {
        self.ids
            .iter()
            .position(|i| i == instance)
            .ok_or_else(|| TrainError::UnknownInstance(instance.to_string()))
    }

    pub fn all_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.entries.iter().flat_map(|e| e.ids().collect::<Vec<_>>())
    }

    fn code(store: &ParamStore, id: ParamId, kind: CodeKind) -> LatentCode {
        LatentCode::new(kind, store.value(id).data().to_vec()).expect("stored codes are finite")
    }

    pub fn shape_code(&self, store: &ParamStore, instance: &str) -> Result<LatentCode, TrainError> {
        let e = self.entries[self.index_of(instance)?];
        Ok(Self::code(store, e.shape, CodeKind::Shape))
    }

    pub fn tex_code(&self, store: &ParamStore, instance: &str) -> Result<LatentCode, TrainError> {
        let e = self.entries[self.index_of(instance)?];
        Ok(Self::code(store, e.tex, CodeKind::Texture))
    }

    /// Learned sin/cos orientation, when pose conditioning is on.
    pub fn orientation(&self, store: &ParamStore, instance: &str) -> Result<Option<[f64; 2]>, TrainError> {
        let e = self.entries[self.index_of(instance)?];
        Ok(e.orientation.map(|id| {
            let d = store.value(id).data();
            [d[0], d[1]]
        }))
    }
}
