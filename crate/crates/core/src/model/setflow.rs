use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SetCouplingStack};
use crate::numerics::{gaussian_entropy_total, gaussian_logpdf_rows, ParamId, ParamStore, Tape, Tensor, Var};

/// A set of `s` entities `[s, D]` together with its global vector `[G]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EntitySet {
    pub entities: Tensor,
    pub global: Tensor,
    pub label: Option<usize>,
}

/// Result of mapping a set to noise space.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub global: Tensor,
    pub entities: Tensor,
    pub entity_logdet: f64,
    pub global_logdet: f64,
}

/// Per-set decomposition of the log-likelihood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLikBreakdown {
    pub set_size: usize,
    /// Base density of the final entities.
    pub entity_base: f64,
    pub entity_logdet: f64,
    /// `entity_base + entity_logdet`
    pub entity_term: f64,
    pub global_base: f64,
    pub global_logdet: f64,
    /// `global_base + global_logdet`
    pub global_term: f64,
    /// `entity_term + global_term`
    pub joint: f64,
    /// `G * 0.5 * ln(2 pi e)`
    pub entropy_adjustment: f64,
    /// `joint - entropy_adjustment`
    pub reported_set_ll: f64,
    /// `reported_set_ll / s`
    pub per_entity_ll: f64,
}

/// Taped counterparts of the scalar terms of [`LogLikBreakdown`].
pub struct LogLikVars {
    pub entity_base: Var,
    pub entity_logdet: Var,
    pub global_base: Var,
    pub global_logdet: Var,
    pub joint: Var,
}

/// Which label conditions the decoder during interpolation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterpolationLabel {
    /// The label of whichever endpoint is closer in `t` (ties go to `a`).
    Nearest,
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SetFlowModel {
    config: ModelConfig,
    stacks: Vec<SetCouplingStack>,
    embedding: Option<ParamId>,
}

impl SetFlowModel {
    /// Builds the model and registers its parameters in `store`. Every
    /// affine-map network starts with a zero final layer, so the fresh model
    /// is the identity map (batch norm aside).
    pub fn new(config: ModelConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut stacks = Vec::with_capacity(config.stacks);
        for k in 0..config.stacks {
            stacks.push(SetCouplingStack::new(store, &format!("stack{k}"), &config, rng)?);
        }
        let embedding = if config.is_conditional() {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let data = (0..config.num_classes * config.label_dim)
                .map(|_| normal.sample(rng))
                .collect();
            let table = Tensor::matrix(config.num_classes, config.label_dim, data)?;
            Some(store.register("label_embedding", table, true))
        } else {
            None
        };
        Ok(Self {
            config,
            stacks,
            embedding,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn stacks(&self) -> &[SetCouplingStack] {
        &self.stacks
    }

    pub fn embedding(&self) -> Option<ParamId> {
        self.embedding
    }

    pub fn entity_dim(&self) -> usize {
        self.config.entity_dim
    }

    pub fn global_dim(&self) -> usize {
        self.config.global_dim
    }

    /// Overwrites the final layer of every s/t network with
    /// `U(-a, a)`, `a = limit / sqrt(fan_in)`, giving a non-identity flow
    /// whose per-stack scales and shifts stay O(limit).
    pub fn randomize(&self, store: &mut ParamStore, rng: &mut impl Rng, limit: f64) {
        let mut nets: Vec<&crate::numerics::Mlp> = Vec::new();
        for stack in &self.stacks {
            nets.extend(stack.affine_nets());
            if let Some(block) = stack.inner() {
                for c in block.couplings() {
                    nets.push(c.scale_net());
                    nets.push(c.shift_net());
                }
            }
        }
        for net in nets {
            let fan_in = net.last_layer().in_dim as f64;
            net.randomize_last(store, rng, limit / fan_in.sqrt());
        }
    }

    /// Embedding row `[1, H]` for `label`, or `None` for unconditional models.
    pub fn embed_label(&self, tape: &mut Tape, label: Option<usize>) -> Result<Option<Var>> {
        match (self.embedding, label) {
            (None, None) => Ok(None),
            (None, Some(_)) => Err(Error::Usage("label given to an unconditional model".into())),
            (Some(_), None) => Err(Error::Usage("conditional model needs a label".into())),
            (Some(id), Some(c)) => {
                if c >= self.config.num_classes {
                    return Err(Error::Usage(format!(
                        "class id {c} out of range for {} classes",
                        self.config.num_classes
                    )));
                }
                let table = tape.param(id);
                Ok(Some(tape.slice_rows(&table, c, c + 1)?))
            }
        }
    }

    /// Untaped embedding lookup, `[H]`.
    pub fn embed_label_tensor(&self, store: &ParamStore, label: usize) -> Result<Tensor> {
        let mut tape = Tape::inference(store);
        let row = self.embed_label(&mut tape, Some(label))?.expect("conditional model");
        row.into_tensor().reshape(&[self.config.label_dim])
    }

    fn check_inputs(&self, entities: &Tensor, global: &Tensor) -> Result<()> {
        let d = self.entity_dim();
        if entities.rank() != 2 || entities.cols() != d || entities.rows() == 0 {
            return Err(Error::dim(format!("entities must be [s >= 1, {d}], got {:?}", entities.shape())));
        }
        if global.len() != self.global_dim() {
            return Err(Error::dim(format!(
                "global vector must have {} entries, got {:?}",
                self.global_dim(),
                global.shape()
            )));
        }
        Ok(())
    }

    fn global_row(&self, global: &Tensor) -> Result<Tensor> {
        global.clone().reshape(&[1, self.global_dim()])
    }

    /// Runs all stacks forward. Returns `(z_K, X_K, entity_logdet, global_logdet)`.
    pub fn forward_vars(
        &self,
        tape: &mut Tape,
        entities: &Var,
        global: &Var,
        label: Option<usize>,
    ) -> Result<(Var, Var, Var, Var)> {
        let h = self.embed_label(tape, label)?;
        let mut z = global.clone();
        let mut x = entities.clone();
        let mut ld_e: Option<Var> = None;
        let mut ld_g: Option<Var> = None;
        for (k, stack) in self.stacks.iter().enumerate() {
            let out = stack.forward(tape, &z, &x, h.as_ref())?;
            for (what, v) in [
                ("global vector", &out.global),
                ("entities", &out.entities),
                ("entity log-determinant", &out.entity_logdet),
                ("global log-determinant", &out.global_logdet),
            ] {
                if !v.value().is_finite() {
                    return Err(Error::Numeric {
                        stack: Some(k),
                        what: what.to_string(),
                    });
                }
            }
            ld_e = Some(match ld_e {
                Some(acc) => tape.add(&acc, &out.entity_logdet)?,
                None => out.entity_logdet,
            });
            ld_g = Some(match ld_g {
                Some(acc) => tape.add(&acc, &out.global_logdet)?,
                None => out.global_logdet,
            });
            z = out.global;
            x = out.entities;
        }
        Ok((z, x, ld_e.expect("K >= 1"), ld_g.expect("K >= 1")))
    }

    /// Taped log-likelihood of one set given its global vector.
    pub fn loglik_vars(
        &self,
        tape: &mut Tape,
        entities: &Tensor,
        global: &Tensor,
        label: Option<usize>,
    ) -> Result<LogLikVars> {
        self.check_inputs(entities, global)?;
        let x = tape.constant(entities.clone());
        let z = tape.constant(self.global_row(global)?);
        let (z_k, x_k, entity_logdet, global_logdet) = self.forward_vars(tape, &x, &z, label)?;
        let entity_rows = gaussian_logpdf_rows(tape, &x_k)?;
        let entity_base = tape.sum_all(&entity_rows);
        let global_rows = gaussian_logpdf_rows(tape, &z_k)?;
        let global_base = tape.sum_all(&global_rows);
        let entity_term = tape.add(&entity_base, &entity_logdet)?;
        let global_term = tape.add(&global_base, &global_logdet)?;
        let joint = tape.add(&entity_term, &global_term)?;
        if !joint.value().is_finite() {
            return Err(Error::Numeric {
                stack: None,
                what: format!("base log-density of the final stack output is {}", joint.value().item()),
            });
        }
        Ok(LogLikVars {
            entity_base,
            entity_logdet,
            global_base,
            global_logdet,
            joint,
        })
    }

    /// Exact log-likelihood breakdown of one set (inference mode).
    pub fn loglik(&self, store: &ParamStore, entities: &Tensor, global: &Tensor, label: Option<usize>) -> Result<LogLikBreakdown> {
        let mut tape = Tape::inference(store);
        let vars = self.loglik_vars(&mut tape, entities, global, label)?;
        Ok(self.breakdown(entities.rows(), &vars))
    }

    pub fn breakdown(&self, set_size: usize, vars: &LogLikVars) -> LogLikBreakdown {
        let entity_base = vars.entity_base.value().item();
        let entity_logdet = vars.entity_logdet.value().item();
        let global_base = vars.global_base.value().item();
        let global_logdet = vars.global_logdet.value().item();
        let entity_term = entity_base + entity_logdet;
        let global_term = global_base + global_logdet;
        let joint = entity_term + global_term;
        let entropy_adjustment = gaussian_entropy_total(self.global_dim());
        let reported_set_ll = joint - entropy_adjustment;
        LogLikBreakdown {
            set_size,
            entity_base,
            entity_logdet,
            entity_term,
            global_base,
            global_logdet,
            global_term,
            joint,
            entropy_adjustment,
            reported_set_ll,
            per_entity_ll: reported_set_ll / set_size as f64,
        }
    }

    /// Maps `(z_0, X)` to noise space `(z_K, X_K)`.
    pub fn encode(&self, store: &ParamStore, entities: &Tensor, global: &Tensor, label: Option<usize>) -> Result<Encoded> {
        self.check_inputs(entities, global)?;
        let mut tape = Tape::inference(store);
        let x = tape.constant(entities.clone());
        let z = tape.constant(self.global_row(global)?);
        let (z_k, x_k, ld_e, ld_g) = self.forward_vars(&mut tape, &x, &z, label)?;
        Ok(Encoded {
            global: z_k.into_tensor().reshape(&[self.global_dim()])?,
            entities: x_k.into_tensor(),
            entity_logdet: ld_e.value().item(),
            global_logdet: ld_g.value().item(),
        })
    }

    /// Inverse of [`SetFlowModel::encode`]: returns `(z_0, X)`.
    pub fn decode(&self, store: &ParamStore, noise_entities: &Tensor, noise_global: &Tensor, label: Option<usize>) -> Result<(Tensor, Tensor)> {
        self.check_inputs(noise_entities, noise_global)?;
        let mut tape = Tape::inference(store);
        let h = self.embed_label(&mut tape, label)?;
        let mut z = tape.constant(self.global_row(noise_global)?);
        let mut x = tape.constant(noise_entities.clone());
        for (k, stack) in self.stacks.iter().enumerate().rev() {
            let (z_prev, x_prev) = stack.inverse(&mut tape, &z, &x, h.as_ref())?;
            if !z_prev.value().is_finite() || !x_prev.value().is_finite() {
                return Err(Error::Numeric {
                    stack: Some(k),
                    what: "inverse pass".into(),
                });
            }
            z = z_prev;
            x = x_prev;
        }
        Ok((z.into_tensor().reshape(&[self.global_dim()])?, x.into_tensor()))
    }

    /// Draws `z ~ N(0, I_G)` and then `s` entities `~ N(0, I_D)`.
    pub fn draw_noise(&self, s: usize, rng: &mut impl Rng) -> (Tensor, Tensor) {
        let g: Vec<f64> = (0..self.global_dim()).map(|_| StandardNormal.sample(rng)).collect();
        let e: Vec<f64> = (0..s * self.entity_dim()).map(|_| StandardNormal.sample(rng)).collect();
        (
            Tensor::vector(g),
            Tensor::matrix(s, self.entity_dim(), e).expect("noise shape"),
        )
    }

    /// Samples a set of `s` entities. Also returns the drawn noise `(z, E)`.
    pub fn sample_with_noise(
        &self,
        store: &ParamStore,
        s: usize,
        label: Option<usize>,
        rng: &mut impl Rng,
    ) -> Result<(EntitySet, Tensor, Tensor)> {
        if s == 0 {
            return Err(Error::Usage("set size must be >= 1".into()));
        }
        let (noise_z, noise_e) = self.draw_noise(s, rng);
        let (global, entities) = self.decode(store, &noise_e, &noise_z, label)?;
        Ok((EntitySet { entities, global, label }, noise_z, noise_e))
    }

    pub fn sample(&self, store: &ParamStore, s: usize, label: Option<usize>, rng: &mut impl Rng) -> Result<EntitySet> {
        Ok(self.sample_with_noise(store, s, label, rng)?.0)
    }

    /// Encodes both sets, mixes their noise as `(1 - t) a + t b` (entities
    /// paired by index) and decodes the mixture.
    pub fn interpolate(
        &self,
        store: &ParamStore,
        a: &EntitySet,
        b: &EntitySet,
        t: f64,
        label: InterpolationLabel,
    ) -> Result<EntitySet> {
        if a.entities.shape() != b.entities.shape() {
            return Err(Error::Usage(format!(
                "interpolation endpoints differ in shape: {:?} vs {:?}",
                a.entities.shape(),
                b.entities.shape()
            )));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Usage(format!("interpolation weight {t} outside [0, 1]")));
        }
        let ea = self.encode(store, &a.entities, &a.global, a.label)?;
        let eb = self.encode(store, &b.entities, &b.global, b.label)?;
        let mix = |u: &Tensor, v: &Tensor| u.zip_map(v, |p, q| (1.0 - t) * p + t * q);
        let z = mix(&ea.global, &eb.global)?;
        let e = mix(&ea.entities, &eb.entities)?;
        let decode_label = match label {
            InterpolationLabel::Fixed(c) => Some(c),
            InterpolationLabel::Nearest if t <= 0.5 => a.label,
            InterpolationLabel::Nearest => b.label,
        };
        let (global, entities) = self.decode(store, &e, &z, decode_label)?;
        Ok(EntitySet {
            entities,
            global,
            label: decode_label,
        })
    }
}
