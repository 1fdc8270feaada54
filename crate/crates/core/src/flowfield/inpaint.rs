use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::grid::{grf_gaussian, FieldGrid, GrfSpec, PatchLayout};
use super::mask::CorruptionMask;
use crate::consensus::ConsensusConfig;
use crate::diffusion::NoiseSchedule;
use crate::driver::{run_acg, Branch, ContextMode, EnsembleConfig, IndexPartition, NoiseCoupling};
use crate::error::{Error, Result};
use crate::numerics::{mix_seed, Cholesky, Matrix, Vector};
use crate::schedules::{preset, PresetName, SchedulePreset};
use crate::scoremodels::{GaussianScoreModel, ScoreModel};

/// Which neighbours of a corrupted patch contribute a branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeighborMode {
    /// Every adjacent patch with at least one known pixel.
    #[default]
    Both,
    /// Only the left neighbour, or the right one at the left edge.
    Single,
}

/// How a branch uses its known pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Conditioning {
    /// The branch model is the pair law conditioned on the branch's known
    /// pixels, as a supervised patch-pair inpainting model would be; the
    /// branch diffuses over the unknown pixels only.
    #[default]
    Exact,
    /// The branch model is the unconditional pair law and known pixels are
    /// clamped to forward-noised observations at every level.
    Replace,
}

#[derive(Debug, Clone)]
pub struct InpaintOptions {
    pub preset: SchedulePreset,
    pub consensus: ConsensusConfig,
    pub sched: NoiseSchedule,
    pub seed: u64,
    /// Independent runs averaged into the estimate.
    pub draws: usize,
    pub neighbors: NeighborMode,
    pub conditioning: Conditioning,
    pub noise: NoiseCoupling,
}

impl Default for InpaintOptions {
    fn default() -> Self {
        let sched = NoiseSchedule::desk();
        Self {
            preset: preset(PresetName::Acg, sched.steps()),
            consensus: ConsensusConfig {
                variant: "unified".into(),
                weights: None,
                lambda: None,
            },
            sched,
            seed: 0,
            draws: 16,
            neighbors: NeighborMode::Both,
            conditioning: Conditioning::Exact,
            noise: NoiseCoupling::default(),
        }
    }
}

type Coords = Vec<(usize, usize)>;

/// `q(hidden | known)` for a zero-mean GRF: the centred conditional law and
/// the gain mapping known values to the conditional mean.
#[derive(Debug)]
struct Conditional {
    centred: GaussianScoreModel,
    /// `|known| × |hidden|`, the transpose of `Σ_hk Σ_kk⁻¹`.
    gain_t: Matrix,
}

impl Conditional {
    fn build(spec: &GrfSpec, known: &[(usize, usize)], hidden: &[(usize, usize)]) -> Result<Self> {
        let coords: Coords = known.iter().chain(hidden).copied().collect();
        let joint = grf_gaussian(spec, &coords)?;
        let known_idx: Vec<usize> = (0..known.len()).collect();
        let cond = joint.condition(&known_idx, &vec![0.0; known.len()])?;
        let gain_t = if known.is_empty() {
            Matrix::zeros(0, hidden.len())
        } else {
            let hidden_idx: Vec<usize> = (known.len()..coords.len()).collect();
            let mut s_kk = joint.cov().select(&known_idx, &known_idx)?;
            // Same nugget as `MultivariateGaussian::condition`.
            let nugget = 1e-10 * s_kk.trace() / known.len() as f64;
            s_kk.add_diagonal(nugget);
            Cholesky::new(&s_kk)?.solve_matrix(&joint.cov().select(&known_idx, &hidden_idx)?)?
        };
        Ok(Self {
            centred: GaussianScoreModel::new(cond),
            gain_t,
        })
    }

    fn given(&self, values: &[f64]) -> Result<GaussianScoreModel> {
        let mut mean = vec![0.0; self.gain_t.cols()];
        for (r, v) in values.iter().enumerate() {
            for (m, g) in mean.iter_mut().zip(self.gain_t.row(r)) {
                *m += g * v;
            }
        }
        self.centred.with_mean(mean)
    }
}

/// Inpainting engine that keeps branch models across calls.
///
/// Pair laws depend only on pixel positions, so the same pixel sets recur
/// across fields with the same mask and their factorizations are reused.
#[derive(Debug)]
pub struct Inpainter {
    spec: GrfSpec,
    layout: PatchLayout,
    joints: Mutex<HashMap<Coords, Arc<GaussianScoreModel>>>,
    conditionals: Mutex<HashMap<(Coords, Coords), Arc<Conditional>>>,
}

impl Inpainter {
    pub fn new(spec: GrfSpec, layout: PatchLayout) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            layout,
            joints: Mutex::new(HashMap::new()),
            conditionals: Mutex::new(HashMap::new()),
        })
    }

    fn joint(&self, coords: Coords) -> Result<Arc<GaussianScoreModel>> {
        if let Some(m) = self
            .joints
            .lock()
            .expect("model cache poisoned")
            .get(&coords)
        {
            return Ok(m.clone());
        }
        let m = Arc::new(GaussianScoreModel::new(grf_gaussian(&self.spec, &coords)?));
        self.joints
            .lock()
            .expect("model cache poisoned")
            .insert(coords, m.clone());
        Ok(m)
    }

    fn conditional(
        &self,
        known: &[(usize, usize)],
        hidden: &[(usize, usize)],
    ) -> Result<Arc<Conditional>> {
        let key = (known.to_vec(), hidden.to_vec());
        if let Some(c) = self
            .conditionals
            .lock()
            .expect("model cache poisoned")
            .get(&key)
        {
            return Ok(c.clone());
        }
        let c = Arc::new(Conditional::build(&self.spec, known, hidden)?);
        self.conditionals
            .lock()
            .expect("model cache poisoned")
            .insert(key, c.clone());
        Ok(c)
    }

    /// Reconstructs the masked pixels. Known pixels are copied unchanged.
    pub fn inpaint(
        &self,
        field: &FieldGrid,
        mask: &CorruptionMask,
        opts: &InpaintOptions,
    ) -> Result<FieldGrid> {
        let (h, w, channels) = field.shape();
        if mask.height() != h || mask.width() != w {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} vs field {h}x{w}",
                mask.height(),
                mask.width()
            )));
        }
        if w != self.layout.width() {
            return Err(Error::ShapeMismatch(format!(
                "field width {w} vs layout width {}",
                self.layout.width()
            )));
        }
        if opts.draws == 0 {
            return Err(Error::InvalidConfig("draws must be positive".into()));
        }
        let mut out = field.clone();
        if !mask.any() {
            return Ok(out);
        }
        let split = |p: usize| -> (Coords, Coords) {
            self.layout
                .patch_coords(p, h)
                .into_iter()
                .partition(|&(y, x)| !mask.is_masked(y, x))
        };
        let count = self.layout.count();
        for p in 0..count {
            let (p_known, p_unknown) = split(p);
            if p_unknown.is_empty() {
                continue;
            }
            let mut neighbours: Vec<usize> = [p.checked_sub(1), (p + 1 < count).then_some(p + 1)]
                .into_iter()
                .flatten()
                .filter(|&q| !split(q).0.is_empty())
                .collect();
            if neighbours.is_empty() {
                return Err(Error::UnreconstructablePatch(p));
            }
            if opts.neighbors == NeighborMode::Single {
                neighbours.truncate(1);
            }
            let contexts: Vec<Coords> = neighbours
                .iter()
                .map(|&q| {
                    split(q)
                        .0
                        .into_iter()
                        .chain(p_known.iter().copied())
                        .collect()
                })
                .collect();
            let op = opts.consensus.build(neighbours.len())?;
            let values = |coords: &[(usize, usize)], c: usize| -> Vector {
                coords.iter().map(|&(y, x)| field.get(y, x, c)).collect()
            };
            for c in 0..channels {
                let mut branches = Vec::with_capacity(contexts.len());
                for (ctx, &q) in contexts.iter().zip(&neighbours) {
                    let obs = values(ctx, c);
                    let branch = match opts.conditioning {
                        Conditioning::Exact => Branch::new(
                            Arc::new(self.conditional(ctx, &p_unknown)?.given(&obs)?),
                            IndexPartition::context_then_subject(0, p_unknown.len())?,
                            ContextMode::CoGenerate,
                            format!("patch{q}"),
                        )?,
                        Conditioning::Replace => {
                            let coords: Coords = ctx.iter().chain(&p_unknown).copied().collect();
                            let model: Arc<dyn ScoreModel> = self.joint(coords)?;
                            Branch::new(
                                model,
                                IndexPartition::context_then_subject(ctx.len(), p_unknown.len())?,
                                ContextMode::Clamp(obs),
                                format!("patch{q}"),
                            )?
                        }
                    };
                    branches.push(branch);
                }
                let uncond_model: Option<Arc<dyn ScoreModel>> = if op.needs_unconditional() {
                    let model = self
                        .conditional(&p_known, &p_unknown)?
                        .given(&values(&p_known, c))?;
                    Some(Arc::new(model))
                } else {
                    None
                };
                let mut cfg = EnsembleConfig {
                    branches,
                    uncond_model,
                    consensus: op.clone(),
                    preset: opts.preset.clone(),
                    sched: opts.sched.clone(),
                    seed: 0,
                    record_trace: false,
                    noise: opts.noise,
                };
                let mut acc = vec![0.0; p_unknown.len()];
                let base = mix_seed(mix_seed(opts.seed, c as u64), p as u64);
                for d in 0..opts.draws {
                    cfg.seed = mix_seed(base, d as u64);
                    let r = run_acg(&cfg)?;
                    for (a, v) in acc.iter_mut().zip(&r.canonical_subject) {
                        *a += v;
                    }
                }
                for (&(y, x), a) in p_unknown.iter().zip(acc) {
                    out.set(y, x, c, a / opts.draws as f64);
                }
            }
        }
        Ok(out)
    }
}

/// One-shot inpainting with a fresh model cache.
pub fn inpaint_acg(
    field: &FieldGrid,
    mask: &CorruptionMask,
    spec: &GrfSpec,
    layout: &PatchLayout,
    opts: &InpaintOptions,
) -> Result<FieldGrid> {
    Inpainter::new(*spec, *layout)?.inpaint(field, mask, opts)
}

/// Posterior mean of the full-grid GRF given the known pixels, per channel.
pub fn exact_posterior(
    field: &FieldGrid,
    mask: &CorruptionMask,
    spec: &GrfSpec,
) -> Result<FieldGrid> {
    let (h, w, channels) = field.shape();
    if mask.height() != h || mask.width() != w {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} vs field {h}x{w}",
            mask.height(),
            mask.width()
        )));
    }
    let mut out = field.clone();
    let all: Coords = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).collect();
    let (known, unknown): (Coords, Coords) =
        all.into_iter().partition(|&(y, x)| !mask.is_masked(y, x));
    if unknown.is_empty() {
        return Ok(out);
    }
    if known.is_empty() {
        for &(y, x) in &unknown {
            for c in 0..channels {
                out.set(y, x, c, 0.0);
            }
        }
        return Ok(out);
    }
    let coords: Coords = known.iter().chain(&unknown).copied().collect();
    if coords.len() > super::grid::MAX_PIXELS {
        return Err(Error::SizeCap {
            pixels: coords.len(),
            cap: super::grid::MAX_PIXELS,
        });
    }
    spec.validate()?;
    // Same nugget convention as Gaussian conditioning.
    let no = known.len();
    let mut k_oo = Matrix::zeros(no, no);
    for i in 0..no {
        for j in i..no {
            let v = spec.kernel(known[i], known[j]);
            k_oo[(i, j)] = v;
            k_oo[(j, i)] = v;
        }
    }
    let nugget = 1e-10 * k_oo.trace() / no as f64;
    k_oo.add_diagonal(nugget);
    let chol = Cholesky::new(&k_oo)?;
    for c in 0..channels {
        let obs: Vector = known.iter().map(|&(y, x)| field.get(y, x, c)).collect();
        let alpha = chol.solve(&obs)?;
        for &u in &unknown {
            let m: f64 = known
                .iter()
                .zip(&alpha)
                .map(|(&k, a)| spec.kernel(u, k) * a)
                .sum();
            out.set(u.0, u.1, c, m);
        }
    }
    Ok(out)
}
