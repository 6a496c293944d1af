//! Supervised training of the generator (next-configuration regression) and
//! the discriminator (distance-to-manifold regression) with Adagrad.
//!
//! Batches never mix scenes, so the scene encoder runs once per batch and
//! its gradient is the sum over the batch rows. Examples are put in a
//! canonical order before seeded shuffling, which makes a run depend only on
//! the example set and the seed.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Mode;
use super::models::{voxel_input, Discriminator, Generator, LATENT_DIM};
use super::optim::{Adagrad, DEFAULT_LR};
use super::tensor::Tensor;
use crate::constraint::ConstraintSystem;
use crate::environments::{derive_seed, random_unit, DatasetRecord, VoxelGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub scene: usize,
    pub q_curr: Vec<f64>,
    pub q_targ: Vec<f64>,
    pub q_next: Vec<f64>,
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Generator training tuples with the occupancy grid of every scene they use.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub voxels: BTreeMap<usize, VoxelGrid>,
    pub examples: Vec<Example>,
}

impl TrainingSet {
    pub fn new(voxels: BTreeMap<usize, VoxelGrid>, mut examples: Vec<Example>) -> Result<Self> {
        if let Some(e) = examples.iter().find(|e| !voxels.contains_key(&e.scene)) {
            return Err(Error::Precondition(format!(
                "no occupancy grid for scene {}",
                e.scene
            )));
        }
        examples.sort_by(|a, b| {
            (a.scene, bits(&a.q_targ), bits(&a.q_curr), bits(&a.q_next)).cmp(&(
                b.scene,
                bits(&b.q_targ),
                bits(&b.q_curr),
                bits(&b.q_next),
            ))
        });
        Ok(Self { voxels, examples })
    }

    pub fn from_records(
        records: &[DatasetRecord],
        voxels: BTreeMap<usize, VoxelGrid>,
    ) -> Result<Self> {
        let examples = records
            .iter()
            .map(|r| Example {
                scene: r.scene_id,
                q_curr: r.q_curr.clone(),
                q_targ: r.q_targ.clone(),
                q_next: r.q_next.clone(),
            })
            .collect();
        Self::new(voxels, examples)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Holds out roughly `fraction` of the demonstrations. Tuples sharing a
    /// scene and target belong to one demonstration and stay together.
    pub fn split(&self, fraction: f64, seed: u64) -> (TrainingSet, TrainingSet) {
        let mut groups: BTreeMap<(usize, Vec<u64>), Vec<usize>> = BTreeMap::new();
        for (i, e) in self.examples.iter().enumerate() {
            groups.entry((e.scene, bits(&e.q_targ))).or_default().push(i);
        }
        let mut keys: Vec<_> = groups.keys().cloned().collect();
        keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = ((keys.len() as f64) * fraction).round() as usize;
        let (val_keys, train_keys) = keys.split_at(n_val.min(keys.len()));
        let pick = |keys: &[(usize, Vec<u64>)]| {
            let examples = keys
                .iter()
                .flat_map(|k| groups[k].iter().map(|&i| self.examples[i].clone()))
                .collect();
            TrainingSet::new(self.voxels.clone(), examples).expect("scenes already checked")
        };
        (pick(train_keys), pick(val_keys))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: DEFAULT_LR,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Mean loss per epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
}

/// Scene-pure batches of example indices in a seeded order.
fn scene_batches<E>(
    examples: &[E],
    scene_of: impl Fn(&E) -> usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut by_scene: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        by_scene.entry(scene_of(e)).or_default().push(i);
    }
    let mut batches = Vec::new();
    for (_, mut idx) in by_scene {
        idx.shuffle(rng);
        batches.extend(idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

fn voxel_tensors(voxels: &BTreeMap<usize, VoxelGrid>) -> Result<BTreeMap<usize, Tensor>> {
    voxels
        .iter()
        .map(|(&id, g)| Ok((id, voxel_input(g)?)))
        .collect()
}

/// Optimizer state of generator training; resumable across calls.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorTrainer {
    pub encoder_opt: Adagrad,
    pub trunk_opt: Adagrad,
    pub epochs_done: usize,
}

impl GeneratorTrainer {
    pub fn new(gen: &Generator, lr: f64) -> Self {
        Self {
            encoder_opt: Adagrad::new(gen.encoder.param_count(), lr),
            trunk_opt: Adagrad::new(gen.trunk.param_count(), lr),
            epochs_done: 0,
        }
    }

    /// Runs `cfg.epochs` more epochs. Epoch `e` draws its shuffling and
    /// dropout from a stream derived from `(cfg.seed, e)`, so an interrupted
    /// run resumed from its checkpoint continues identically.
    pub fn train(
        &mut self,
        gen: &mut Generator,
        train: &TrainingSet,
        validation: Option<&TrainingSet>,
        cfg: &TrainConfig,
    ) -> Result<LossCurve> {
        if train.is_empty() {
            return Err(Error::Precondition("training set is empty".into()));
        }
        let tensors = voxel_tensors(&train.voxels)?;
        let mut curve = LossCurve::default();
        for _ in 0..cfg.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, self.epochs_done as u64));
            let batches = scene_batches(&train.examples, |e| e.scene, cfg.batch_size, &mut rng);
            let mut total = 0.0;
            for batch in &batches {
                let examples: Vec<&Example> = batch.iter().map(|&i| &train.examples[i]).collect();
                total += self.step(gen, &tensors[&examples[0].scene], &examples, &mut rng)?
                    * examples.len() as f64;
            }
            self.epochs_done += 1;
            curve.train.push(total / train.len() as f64);
            if let Some(val) = validation.filter(|v| !v.is_empty()) {
                curve.validation.push(generator_loss(gen, val)?);
            }
        }
        Ok(curve)
    }

    fn step(
        &mut self,
        gen: &mut Generator,
        voxels: &Tensor,
        examples: &[&Example],
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let enc = gen.encoder.forward(voxels, Mode::Train, rng)?;
        let z = enc.output().data().to_vec();
        let rows = examples
            .iter()
            .map(|e| gen.trunk_row(&z, &e.q_curr, &e.q_targ))
            .collect::<Result<Vec<_>>>()?;
        let input = Tensor::from_rows(&rows)?;
        let fwd = gen.trunk.forward(&input, Mode::Train, rng)?;
        let out = fwd.output();
        let n = examples.len() as f64;
        let dof = gen.dof();
        let mut loss = 0.0;
        let mut grad = vec![0.0; out.data().len()];
        for (b, e) in examples.iter().enumerate() {
            for d in 0..dof {
                let diff = out.row(b)[d] - e.q_next[d];
                loss += diff * diff;
                grad[b * dof + d] = 2.0 * diff / n;
            }
        }
        let grad = Tensor::new(out.shape().to_vec(), grad)?;
        let (g_trunk, g_in) = gen.trunk.backward(&fwd, &grad, true)?;
        let g_in = g_in.expect("requested");
        let mut g_z = vec![0.0; LATENT_DIM];
        for b in 0..examples.len() {
            for (gz, gi) in g_z.iter_mut().zip(&g_in.row(b)[..LATENT_DIM]) {
                *gz += gi;
            }
        }
        let (g_enc, _) = gen
            .encoder
            .backward(&enc, &Tensor::new(vec![1, LATENT_DIM], g_z)?, false)?;
        self.trunk_opt.step(gen.trunk.params_mut(), &g_trunk)?;
        self.encoder_opt.step(gen.encoder.params_mut(), &g_enc)?;
        Ok(loss / n)
    }
}

/// Trains a generator from its current parameters with a fresh optimizer.
pub fn train_generator(
    gen: &mut Generator,
    train: &TrainingSet,
    validation: Option<&TrainingSet>,
    cfg: &TrainConfig,
) -> Result<(LossCurve, GeneratorTrainer)> {
    let mut trainer = GeneratorTrainer::new(gen, cfg.lr);
    let curve = trainer.train(gen, train, validation, cfg)?;
    Ok((curve, trainer))
}

/// Mean squared prediction error with dropout disabled.
pub fn generator_loss(gen: &Generator, set: &TrainingSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Precondition("evaluation set is empty".into()));
    }
    let mut total = 0.0;
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    for (&scene, grid) in &set.voxels {
        let examples: Vec<&Example> = set.examples.iter().filter(|e| e.scene == scene).collect();
        if examples.is_empty() {
            continue;
        }
        let z = gen.encode_grid(grid)?;
        for chunk in examples.chunks(256) {
            let rows = chunk
                .iter()
                .map(|e| gen.trunk_row(&z, &e.q_curr, &e.q_targ))
                .collect::<Result<Vec<_>>>()?;
            let preds = gen.predict_rows(&rows, Mode::Deterministic, &mut unused)?;
            for (p, e) in preds.iter().zip(chunk) {
                total += p.iter().zip(&e.q_next).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
        }
    }
    Ok(total / set.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceExample {
    pub scene: usize,
    pub q: Vec<f64>,
    /// Distance label `‖F(q)‖`.
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSet {
    pub voxels: BTreeMap<usize, VoxelGrid>,
    pub examples: Vec<DistanceExample>,
}

/// Radius range of the negative samples around the unit sphere.
pub const NEGATIVE_RADIUS: [f64; 2] = [0.3, 1.7];

/// Positives are the demonstration states; negatives are drawn with a
/// uniform direction and a radius uniform in `radius`, `negatives` per
/// positive. Every label is computed from the constraint.
pub fn distance_set(
    set: &TrainingSet,
    sys: &ConstraintSystem,
    negatives: usize,
    radius: [f64; 2],
    seed: u64,
) -> Result<DistanceSet> {
    let mut seen = std::collections::BTreeSet::new();
    let mut positives = Vec::new();
    for e in &set.examples {
        for q in [&e.q_curr, &e.q_next] {
            if seen.insert((e.scene, bits(q))) {
                positives.push((e.scene, q.clone()));
            }
        }
    }
    let label = |q: &[f64]| sys.distance(&DVector::from_column_slice(q));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(positives.len() * (1 + negatives));
    for (scene, q) in positives {
        examples.push(DistanceExample {
            scene,
            d: label(&q),
            q,
        });
        for _ in 0..negatives {
            let r = rng.random_range(radius[0]..radius[1]);
            let q: Vec<f64> = (random_unit(&mut rng) * r).as_slice().to_vec();
            examples.push(DistanceExample {
                scene,
                d: label(&q),
                q,
            });
        }
    }
    Ok(DistanceSet {
        voxels: set.voxels.clone(),
        examples,
    })
}

impl DistanceSet {
    /// Adds a scene with no demonstrations: `count` samples drawn like the
    /// negatives of [`distance_set`]. The distance label does not depend on
    /// the scene, so any occupancy grid widens the latents the model sees.
    pub fn add_scene(
        &mut self,
        id: usize,
        grid: VoxelGrid,
        sys: &ConstraintSystem,
        count: usize,
        radius: [f64; 2],
        seed: u64,
    ) -> Result<()> {
        if self.voxels.contains_key(&id) {
            return Err(Error::Precondition(format!("scene {id} is already present")));
        }
        self.voxels.insert(id, grid);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..count {
            let r = rng.random_range(radius[0]..radius[1]);
            let q = random_unit(&mut rng) * r;
            self.examples.push(DistanceExample {
                scene: id,
                d: sys.distance(&DVector::from_column_slice(q.as_slice())),
                q: q.as_slice().to_vec(),
            });
        }
        Ok(())
    }
}

/// Optimizer state of discriminator training.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorTrainer {
    pub opt: Adagrad,
    pub epochs_done: usize,
    /// Standard deviation of Gaussian noise added to every latent component
    /// of a training row.
    pub latent_noise: f64,
}

impl DiscriminatorTrainer {
    pub fn new(disc: &Discriminator, lr: f64) -> Self {
        Self {
            opt: Adagrad::new(disc.net.param_count(), lr),
            epochs_done: 0,
            latent_noise: 0.0,
        }
    }

    /// Trains on `z ⊕ q` inputs where `z` comes from the (frozen) encoder of
    /// `gen`.
    pub fn train(
        &mut self,
        disc: &mut Discriminator,
        gen: &Generator,
        set: &DistanceSet,
        cfg: &TrainConfig,
    ) -> Result<LossCurve> {
        if set.examples.is_empty() {
            return Err(Error::Precondition("training set is empty".into()));
        }
        let latents = scene_latents(gen, &set.voxels)?;
        let mut curve = LossCurve::default();
        for _ in 0..cfg.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.seed ^ 0xD15C,
                self.epochs_done as u64,
            ));
            let batches = scene_batches(&set.examples, |e| e.scene, cfg.batch_size, &mut rng);
            let mut total = 0.0;
            for batch in &batches {
                let examples: Vec<&DistanceExample> =
                    batch.iter().map(|&i| &set.examples[i]).collect();
                let z = &latents[&examples[0].scene];
                let rows: Vec<Vec<f64>> = examples
                    .iter()
                    .map(|e| {
                        let mut r = z.clone();
                        if self.latent_noise > 0.0 {
                            for v in &mut r {
                                *v += self.latent_noise * rng.sample::<f64, _>(StandardNormal);
                            }
                        }
                        r.extend_from_slice(&e.q);
                        r
                    })
                    .collect();
                let fwd = disc
                    .net
                    .forward(&Tensor::from_rows(&rows)?, Mode::Train, &mut rng)?;
                let n = examples.len() as f64;
                let mut grad = Vec::with_capacity(examples.len());
                for (b, e) in examples.iter().enumerate() {
                    let diff = fwd.output().data()[b] - e.d;
                    total += diff * diff;
                    grad.push(2.0 * diff / n);
                }
                let grad = Tensor::new(vec![examples.len(), 1], grad)?;
                let (g, _) = disc.net.backward(&fwd, &grad, false)?;
                self.opt.step(disc.net.params_mut(), &g)?;
            }
            self.epochs_done += 1;
            curve.train.push(total / set.examples.len() as f64);
        }
        Ok(curve)
    }
}

pub fn train_discriminator(
    disc: &mut Discriminator,
    gen: &Generator,
    set: &DistanceSet,
    cfg: &TrainConfig,
) -> Result<(LossCurve, DiscriminatorTrainer)> {
    let mut trainer = DiscriminatorTrainer::new(disc, cfg.lr);
    let curve = trainer.train(disc, gen, set, cfg)?;
    Ok((curve, trainer))
}

pub fn scene_latents(
    gen: &Generator,
    voxels: &BTreeMap<usize, VoxelGrid>,
) -> Result<BTreeMap<usize, Vec<f64>>> {
    voxels
        .iter()
        .map(|(&id, g)| Ok((id, gen.encode_grid(g)?)))
        .collect()
}
