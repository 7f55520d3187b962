//! Temporal fusion transformer with quantile heads.
//!
//! Pipeline per sample: static embeddings go through a variable selection
//! network and four context GRNs (selection, encoder hidden, encoder cell,
//! enrichment). Past and future inputs are embedded per variable and
//! selected per time step under the selection context. An LSTM encoder
//! runs over the `k` past steps and a decoder continues over the `τ`
//! future steps; a gated skip joins the LSTM output to its input. A static
//! enrichment GRN feeds masked interpretable attention over all `k+τ`
//! positions, followed by a gated skip, a position-wise GRN and a final
//! gated skip back to the LSTM stage. Each target has a linear head that
//! emits one value per quantile at every future step.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formulation::{EncodedSample, ForecastSample, NormStats, Panel, VarKind, VarSpec, VariableSchema};
use crate::math;
use crate::nn::{
    AttentionMask, Builder, Embedding, GateAddNorm, Grn, InterpretableMha, Linear, Lstm, ParamStore, VariableSelection,
};
use crate::seed;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TftConfig {
    pub d: usize,
    pub heads: usize,
    pub dropout: f64,
    pub k: usize,
    pub tau: usize,
    pub quantiles: Vec<f64>,
    pub schema: VariableSchema,
}

impl TftConfig {
    /// Defaults for a schema: width 16, two heads, dropout 0.1, `k = 4`,
    /// `τ = 16`, quartiles and median.
    pub fn new(schema: VariableSchema) -> Self {
        Self {
            d: 16,
            heads: 2,
            dropout: 0.1,
            k: 4,
            tau: 16,
            quantiles: vec![0.25, 0.5, 0.75],
            schema,
        }
    }

    pub fn n_targets(&self) -> usize {
        self.schema.n_targets()
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let q = &self.quantiles;
        if q.is_empty() || q.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return Err(Error::InvalidConfig("quantiles must lie in (0, 1)".into()));
        }
        if q.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("quantiles must be strictly ascending".into()));
        }
        if !q.contains(&0.5) {
            return Err(Error::InvalidConfig("quantiles must include the median".into()));
        }
        if self.d < 2 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "width {} must be at least 2 and divisible by {} heads",
                self.d, self.heads
            )));
        }
        if self.k == 0 || self.tau == 0 {
            return Err(Error::InvalidConfig("k and tau must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn median_index(&self) -> usize {
        self.quantiles.iter().position(|&q| q == 0.5).unwrap_or(0)
    }
}

/// Maps one variable group `[B, T, n]` of raw values to `[B, T, n, d]`.
/// Real and binary variables use their own affine map of the scalar,
/// categorical ones a lookup table and cyclic ones an affine map of the
/// sin/cos pair.
#[derive(Debug, Clone)]
struct InputEmbedding {
    n: usize,
    d: usize,
    real_idx: Vec<usize>,
    real: Option<Linear>,
    cats: Vec<(usize, usize, Embedding)>,
    cycs: Vec<(usize, usize, Linear)>,
    /// Position of each variable in the concatenated pieces.
    order: Vec<usize>,
}

impl InputEmbedding {
    fn new(b: &mut Builder<'_>, vars: &[VarSpec], d: usize) -> Result<Self> {
        let real_idx: Vec<usize> = vars
            .iter()
            .enumerate()
            .filter(|(_, v)| matches!(v.kind, VarKind::Real | VarKind::Binary))
            .map(|(i, _)| i)
            .collect();
        let real = (!real_idx.is_empty())
            .then(|| Linear::grouped(&mut b.sub("real"), "W", Some("b"), real_idx.len(), 1, d))
            .transpose()?;
        let mut cats = Vec::new();
        let mut cycs = Vec::new();
        for (i, v) in vars.iter().enumerate() {
            match v.kind {
                VarKind::Categorical { cardinality } => {
                    cats.push((i, cardinality, Embedding::new(&mut b.sub(&v.name), cardinality, d)?))
                }
                VarKind::Cyclic { period } => {
                    cycs.push((i, period, Linear::new(&mut b.sub(&v.name), "W", Some("b"), 2, d)?))
                }
                _ => {}
            }
        }
        let mut concat_order: Vec<usize> = real_idx.clone();
        concat_order.extend(cats.iter().map(|c| c.0));
        concat_order.extend(cycs.iter().map(|c| c.0));
        let mut order = vec![0; vars.len()];
        for (pos, &var) in concat_order.iter().enumerate() {
            order[var] = pos;
        }
        Ok(Self {
            n: vars.len(),
            d,
            real_idx,
            real,
            cats,
            cycs,
            order,
        })
    }

    fn forward(&self, g: &mut Graph, p: &ParamStore, x: &[f64], batch: usize, steps: usize) -> Result<Var> {
        let rows = batch * steps;
        if x.len() != rows * self.n {
            return Err(Error::LengthMismatch(x.len(), rows * self.n));
        }
        let mut parts = Vec::new();
        if let Some(lin) = &self.real {
            let nr = self.real_idx.len();
            let mut data = Vec::with_capacity(rows * nr);
            for row in x.chunks(self.n) {
                data.extend(self.real_idx.iter().map(|&i| row[i]));
            }
            let xr = g.constant(Tensor::new(vec![batch, steps, nr, 1], data)?);
            parts.push(lin.forward(g, p, xr)?);
        }
        for (i, card, emb) in &self.cats {
            let ids = x
                .chunks(self.n)
                .map(|row| category(row[*i], *card))
                .collect::<Result<Vec<_>>>()?;
            let e = emb.forward(g, p, &ids)?;
            parts.push(g.reshape(e, &[batch, steps, 1, self.d])?);
        }
        for (i, period, lin) in &self.cycs {
            let mut data = Vec::with_capacity(rows * 2);
            for row in x.chunks(self.n) {
                let angle = 2.0 * core::f64::consts::PI * row[*i] / *period as f64;
                data.extend([math::sin(angle), math::cos(angle)]);
            }
            let xc = g.constant(Tensor::new(vec![batch, steps, 1, 2], data)?);
            parts.push(lin.forward(g, p, xc)?);
        }
        let all = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat(&parts, 2)?
        };
        if self.order.iter().enumerate().all(|(i, &o)| i == o) {
            Ok(all)
        } else {
            g.index_select(all, 2, &self.order)
        }
    }
}

fn category(value: f64, cardinality: usize) -> Result<usize> {
    if value >= 0.0 && value < cardinality as f64 && value == math::floor(value) {
        Ok(value as usize)
    } else {
        Err(Error::SchemaMismatch(format!(
            "category value {value} outside 0..{cardinality}"
        )))
    }
}

/// Stacked network inputs of several samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    /// `[B, n_static]`
    pub static_ids: Vec<usize>,
    /// `[B, k, n_past]`
    pub past: Vec<f64>,
    /// `[B, τ, n_future]`
    pub future: Vec<f64>,
    /// `[B, τ, n_targets]`
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn from_samples(samples: &[&EncodedSample]) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("batch"))?;
        let mut b = Batch {
            size: samples.len(),
            static_ids: Vec::new(),
            past: Vec::new(),
            future: Vec::new(),
            labels: Vec::new(),
        };
        for s in samples {
            if s.past.len() != first.past.len() || s.future.len() != first.future.len() {
                return Err(Error::LengthMismatch(s.past.len(), first.past.len()));
            }
            b.static_ids.extend_from_slice(&s.static_ids);
            b.past.extend_from_slice(&s.past);
            b.future.extend_from_slice(&s.future);
            b.labels.extend_from_slice(&s.labels);
        }
        Ok(b)
    }
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct TftOutput {
    /// `[B, τ, n_targets, Q]`
    pub pred: Var,
    /// `[B, H, k+τ, k+τ]`
    pub attention: Var,
    /// `[B, k, n_past]`
    pub past_weights: Var,
    /// `[B, τ, n_future]`
    pub future_weights: Var,
    /// `[B, n_static]`
    pub static_weights: Var,
}

/// Forecast of one sample with its interpretability tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSet {
    /// `[τ, n_targets, Q]`
    pub pred: Vec<f64>,
    /// `[τ, k+τ]`: head-averaged attention of each future query position.
    pub attention: Vec<f64>,
    /// `[k, n_past]`
    pub past_weights: Vec<f64>,
    /// `[τ, n_future]`
    pub future_weights: Vec<f64>,
    /// `[n_static]`
    pub static_weights: Vec<f64>,
}

impl ForecastSet {
    pub fn value(&self, cfg: &TftConfig, h: usize, target: usize, q: usize) -> f64 {
        self.pred[(h * cfg.n_targets() + target) * cfg.quantiles.len() + q]
    }

    /// Median forecast as `[τ, n_targets]`.
    pub fn median(&self, cfg: &TftConfig) -> Vec<f64> {
        let m = cfg.median_index();
        self.pred.chunks(cfg.quantiles.len()).map(|qs| qs[m]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Tft {
    cfg: TftConfig,
    static_emb: InputEmbedding,
    past_emb: InputEmbedding,
    future_emb: InputEmbedding,
    static_vsn: VariableSelection,
    past_vsn: VariableSelection,
    future_vsn: VariableSelection,
    ctx_select: Grn,
    ctx_hidden: Grn,
    ctx_cell: Grn,
    ctx_enrich: Grn,
    encoder: Lstm,
    decoder: Lstm,
    lstm_gate: GateAddNorm,
    enrich: Grn,
    attention: InterpretableMha,
    attention_gate: GateAddNorm,
    position_grn: Grn,
    output_gate: GateAddNorm,
    heads: Vec<Linear>,
    mask: AttentionMask,
}

impl Tft {
    /// Creates parameters under `tft.` with initial values drawn from `seed`.
    pub fn new(store: &mut ParamStore, cfg: TftConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::rng(seed, "tft-init");
        let mut b = Builder::new(store, &mut rng, "tft");
        let (d, dr) = (cfg.d, cfg.dropout);
        let s = &cfg.schema;
        let past_vars = s.past_vars();
        let static_emb = InputEmbedding::new(&mut b.sub("static_emb"), &s.static_vars, d)?;
        let past_emb = InputEmbedding::new(&mut b.sub("past_emb"), &past_vars, d)?;
        let future_emb = InputEmbedding::new(&mut b.sub("future_emb"), &s.known, d)?;
        let static_vsn = VariableSelection::new(&mut b.sub("static_vsn"), s.static_vars.len(), d, None, dr)?;
        let past_vsn = VariableSelection::new(&mut b.sub("past_vsn"), past_vars.len(), d, Some(d), dr)?;
        let future_vsn = VariableSelection::new(&mut b.sub("future_vsn"), s.known.len(), d, Some(d), dr)?;
        let mut ctx = |name: &str| Grn::new(&mut b.sub(name), d, d, d, None, dr);
        let ctx_select = ctx("ctx_select")?;
        let ctx_hidden = ctx("ctx_hidden")?;
        let ctx_cell = ctx("ctx_cell")?;
        let ctx_enrich = ctx("ctx_enrich")?;
        let encoder = Lstm::new(&mut b.sub("encoder"), d, d)?;
        let decoder = Lstm::new(&mut b.sub("decoder"), d, d)?;
        let lstm_gate = GateAddNorm::new(&mut b.sub("lstm_gate"), d, d, dr)?;
        let enrich = Grn::new(&mut b.sub("enrich"), d, d, d, Some(d), dr)?;
        let attention = InterpretableMha::new(&mut b.sub("attention"), d, cfg.heads)?;
        let attention_gate = GateAddNorm::new(&mut b.sub("attention_gate"), d, d, dr)?;
        let position_grn = Grn::new(&mut b.sub("position_grn"), d, d, d, None, dr)?;
        let output_gate = GateAddNorm::new(&mut b.sub("output_gate"), d, d, 0.0)?;
        let heads = s
            .targets
            .iter()
            .map(|t| Linear::new(&mut b.sub(&format!("head.{t}")), "W", Some("b"), d, cfg.quantiles.len()))
            .collect::<Result<Vec<_>>>()?;
        let mask = AttentionMask::causal(cfg.k + cfg.tau);
        Ok(Self {
            cfg,
            static_emb,
            past_emb,
            future_emb,
            static_vsn,
            past_vsn,
            future_vsn,
            ctx_select,
            ctx_hidden,
            ctx_cell,
            ctx_enrich,
            encoder,
            decoder,
            lstm_gate,
            enrich,
            attention,
            attention_gate,
            position_grn,
            output_gate,
            heads,
            mask,
        })
    }

    pub fn config(&self) -> &TftConfig {
        &self.cfg
    }

    /// Records the forward pass of a batch.
    pub fn forward(&self, g: &mut Graph, p: &ParamStore, batch: &Batch) -> Result<TftOutput> {
        let c = &self.cfg;
        let s = &c.schema;
        let (bsz, d, k, tau) = (batch.size, c.d, c.k, c.tau);
        if batch.static_ids.len() != bsz * s.static_vars.len() {
            return Err(Error::LengthMismatch(batch.static_ids.len(), bsz * s.static_vars.len()));
        }
        if batch.past.len() != bsz * k * s.n_past() || batch.future.len() != bsz * tau * s.n_future() {
            return Err(Error::SchemaMismatch(format!(
                "batch windows do not match k={k}, tau={tau} and the schema"
            )));
        }
        let static_raw: Vec<f64> = batch.static_ids.iter().map(|&i| i as f64).collect();
        let st = self.static_emb.forward(g, p, &static_raw, bsz, 1)?;
        let st = g.reshape(st, &[bsz, s.static_vars.len(), d])?;
        let static_sel = self.static_vsn.forward(g, p, st, None)?;
        let cs = static_sel.combined;
        let c_select = self.ctx_select.forward(g, p, cs, None)?;
        let c_hidden = self.ctx_hidden.forward(g, p, cs, None)?;
        let c_cell = self.ctx_cell.forward(g, p, cs, None)?;
        let c_enrich = self.ctx_enrich.forward(g, p, cs, None)?;
        let c_select = g.reshape(c_select, &[bsz, 1, d])?;
        let c_enrich = g.reshape(c_enrich, &[bsz, 1, d])?;

        let past = self.past_emb.forward(g, p, &batch.past, bsz, k)?;
        let past_sel = self.past_vsn.forward(g, p, past, Some(c_select))?;
        let fut = self.future_emb.forward(g, p, &batch.future, bsz, tau)?;
        let fut_sel = self.future_vsn.forward(g, p, fut, Some(c_select))?;

        let (enc, h, cell) = self.encoder.sequence(g, p, past_sel.combined, c_hidden, c_cell)?;
        let (dec, _, _) = self.decoder.sequence(g, p, fut_sel.combined, h, cell)?;
        let lstm_out = g.concat(&[enc, dec], 1)?;
        let lstm_in = g.concat(&[past_sel.combined, fut_sel.combined], 1)?;
        let temporal = self.lstm_gate.forward(g, p, lstm_out, lstm_in)?;

        let enriched = self.enrich.forward(g, p, temporal, Some(c_enrich))?;
        let att = self.attention.forward(g, p, enriched, enriched, enriched, &self.mask)?;
        let attended = self.attention_gate.forward(g, p, att.values, enriched)?;
        let ff = self.position_grn.forward(g, p, attended, None)?;
        let out = self.output_gate.forward(g, p, ff, temporal)?;
        let future_out = g.narrow(out, 1, k, tau)?;

        let nq = c.quantiles.len();
        let mut per_target = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let y = head.forward(g, p, future_out)?;
            per_target.push(g.reshape(y, &[bsz, tau, 1, nq])?);
        }
        let pred = if per_target.len() == 1 {
            per_target[0]
        } else {
            g.concat(&per_target, 2)?
        };
        Ok(TftOutput {
            pred,
            attention: att.weights,
            past_weights: past_sel.weights,
            future_weights: fut_sel.weights,
            static_weights: static_sel.weights,
        })
    }

    /// Inference in batches; outputs stay in normalized units.
    pub fn forecast(&self, p: &ParamStore, samples: &[&EncodedSample], batch_size: usize) -> Result<Vec<ForecastSet>> {
        let c = &self.cfg;
        let (k, tau, heads) = (c.k, c.tau, c.heads);
        let len = k + tau;
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(batch_size.max(1)) {
            let batch = Batch::from_samples(chunk)?;
            let mut g = Graph::new();
            let o = self.forward(&mut g, p, &batch)?;
            let pred = g.data(o.pred);
            let att = g.data(o.attention);
            let pw = g.data(o.past_weights);
            let fw = g.data(o.future_weights);
            let sw = g.data(o.static_weights);
            let (np, nf, ns) = (c.schema.n_past(), c.schema.n_future(), c.schema.static_vars.len());
            let per = tau * c.n_targets() * c.quantiles.len();
            for b in 0..chunk.len() {
                let mut attention = vec![0.0; tau * len];
                for h in 0..heads {
                    for qi in 0..tau {
                        let row = &att[((b * heads + h) * len + k + qi) * len..][..len];
                        for (a, w) in attention[qi * len..][..len].iter_mut().zip(row) {
                            *a += w / heads as f64;
                        }
                    }
                }
                let static_weights = if sw.len() == chunk.len() * ns {
                    sw[b * ns..][..ns].to_vec()
                } else {
                    vec![1.0; ns]
                };
                out.push(ForecastSet {
                    pred: pred[b * per..][..per].to_vec(),
                    attention,
                    past_weights: pw[b * k * np..][..k * np].to_vec(),
                    future_weights: fw[b * tau * nf..][..tau * nf].to_vec(),
                    static_weights,
                });
            }
        }
        Ok(out)
    }

    /// Mean pinball loss of a batch on `g`.
    pub fn loss(&self, g: &mut Graph, p: &ParamStore, batch: &Batch) -> Result<Var> {
        let out = self.forward(g, p, batch)?;
        let c = &self.cfg;
        let labels = g.constant(Tensor::new(
            vec![batch.size, c.tau, c.n_targets(), 1],
            batch.labels.clone(),
        )?);
        crate::training::pinball_graph(g, out.pred, labels, &c.quantiles)
    }
}

/// Maps predictions of a forecast set from normalized units back to
/// target units for `entity`.
pub fn denormalize(set: &mut ForecastSet, cfg: &TftConfig, stats: &NormStats, entity: &str) -> Result<()> {
    let off = cfg.schema.target_offset();
    let (nt, nq) = (cfg.n_targets(), cfg.quantiles.len());
    for (i, v) in set.pred.iter_mut().enumerate() {
        let target = (i / nq) % nt;
        *v = stats.denormalize(entity, off + target, *v)?;
    }
    Ok(())
}

/// Forecast for `entity` anchored at `anchor`, from raw panel values. The
/// panel is normalized with `stats` and the predictions are returned in
/// target units.
pub fn predict(
    model: &Tft,
    params: &ParamStore,
    stats: &NormStats,
    raw: &Panel,
    entity: usize,
    anchor: usize,
) -> Result<ForecastSet> {
    let c = model.config();
    if raw.schema != c.schema {
        return Err(Error::SchemaMismatch("panel schema differs from the model".into()));
    }
    let sample = ForecastSample { entity, anchor };
    raw.check_window(sample, c.k, c.tau)?;
    let one = Panel::new(raw.schema.clone(), vec![raw.entities[entity].clone()])?;
    let norm = stats.apply(&one)?;
    let enc = norm.encode(ForecastSample { entity: 0, anchor }, c.k, c.tau)?;
    let mut set = model.forecast(params, &[&enc], 1)?.remove(0);
    denormalize(&mut set, c, stats, &raw.entities[entity].name)?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulation::{Entity, VarSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_schema() -> VariableSchema {
        VariableSchema {
            static_vars: vec![VarSpec::new("site", VarKind::Categorical { cardinality: 3 })],
            observed: vec![VarSpec::new("obs", VarKind::Real)],
            known: vec![
                VarSpec::new("load", VarKind::Real),
                VarSpec::new("phase", VarKind::Cyclic { period: 8 }),
            ],
            targets: vec!["y".into()],
        }
    }

    fn tiny_cfg() -> TftConfig {
        TftConfig {
            d: 4,
            heads: 2,
            dropout: 0.0,
            k: 2,
            tau: 2,
            quantiles: vec![0.25, 0.5, 0.75],
            schema: tiny_schema(),
        }
    }

    fn sample(cfg: &TftConfig, seed: u64) -> EncodedSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = &cfg.schema;
        let mut row = |t: usize| -> Vec<f64> {
            vec![
                rng.random::<f64>(),
                rng.random::<f64>(),
                (t % 8) as f64,
                rng.random::<f64>(),
            ]
        };
        let rows: Vec<Vec<f64>> = (0..cfg.k + cfg.tau).map(&mut row).collect();
        let ko = s.known_offset();
        let to = s.target_offset();
        EncodedSample {
            static_ids: vec![(seed % 3) as usize],
            past: rows[..cfg.k].concat(),
            future: rows[cfg.k..].iter().flat_map(|r| r[ko..to].to_vec()).collect(),
            labels: rows[cfg.k..].iter().flat_map(|r| r[to..].to_vec()).collect(),
        }
    }

    #[test]
    fn output_shapes_for_delay_defaults() {
        let cfg = TftConfig::new(VariableSchema::delay());
        let mut store = ParamStore::new();
        let model = Tft::new(&mut store, cfg.clone(), 1).unwrap();
        let s = &cfg.schema;
        let mut past = vec![0.0; cfg.k * s.n_past()];
        for t in 0..cfg.k {
            past[t * s.n_past() + s.known_offset() + 20] = 3.0;
        }
        let enc = EncodedSample {
            static_ids: vec![2],
            past,
            future: vec![0.0; cfg.tau * s.n_future()],
            labels: vec![0.0; cfg.tau * 2],
        };
        let set = model.forecast(&store, &[&enc], 1).unwrap().remove(0);
        assert_eq!(set.pred.len(), 16 * 2 * 3);
        assert_eq!(set.attention.len(), 16 * 20);
        assert_eq!(set.past_weights.len(), 4 * 47);
        assert_eq!(set.future_weights.len(), 16 * 23);
        for row in set.past_weights.chunks(47).chain(set.future_weights.chunks(23)) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for (qi, row) in set.attention.chunks(20).enumerate() {
            assert!(row[cfg.k + qi + 1..].iter().all(|&w| w == 0.0));
        }
    }

    #[test]
    fn future_perturbation_leaves_earlier_horizons() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new();
        let model = Tft::new(&mut store, cfg.clone(), 2).unwrap();
        let a = sample(&cfg, 5);
        let mut b = a.clone();
        b.future[2] += 7.5; // load at the second horizon
        let fa = model.forecast(&store, &[&a], 1).unwrap().remove(0);
        let fb = model.forecast(&store, &[&b], 1).unwrap().remove(0);
        let per_h = cfg.n_targets() * cfg.quantiles.len();
        assert_eq!(fa.pred[..per_h], fb.pred[..per_h]);
        assert_ne!(fa.pred[per_h..], fb.pred[per_h..]);
    }

    #[test]
    fn end_to_end_gradient_check() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new();
        let model = Tft::new(&mut store, cfg.clone(), 3).unwrap();
        let samples = [sample(&cfg, 1), sample(&cfg, 2)];
        let batch = Batch::from_samples(&[&samples[0], &samples[1]]).unwrap();
        let err = crate::nn::check_params(&store, 3, |g, p| model.loss(g, p, &batch)).unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn same_seed_same_outputs() {
        let cfg = tiny_cfg();
        let (mut s1, mut s2) = (ParamStore::new(), ParamStore::new());
        let m1 = Tft::new(&mut s1, cfg.clone(), 9).unwrap();
        let m2 = Tft::new(&mut s2, cfg.clone(), 9).unwrap();
        let x = sample(&cfg, 4);
        assert_eq!(m1.forecast(&s1, &[&x], 1).unwrap(), m2.forecast(&s2, &[&x], 1).unwrap());
    }

    #[test]
    fn zero_head_gives_bias() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new();
        let model = Tft::new(&mut store, cfg.clone(), 4).unwrap();
        let w = store.id("tft.head.y.W").unwrap();
        store.get_mut(w).data_mut().fill(0.0);
        let b = store.id("tft.head.y.b").unwrap();
        store.get_mut(b).data_mut().copy_from_slice(&[-1.0, 0.5, 2.0]);
        let set = model.forecast(&store, &[&sample(&cfg, 6)], 1).unwrap().remove(0);
        for qs in set.pred.chunks(3) {
            assert_eq!(qs, &[-1.0, 0.5, 2.0]);
        }
    }

    #[test]
    fn predict_matches_forward_on_window() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new();
        let model = Tft::new(&mut store, cfg.clone(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<f64> = (0..10)
            .flat_map(|t| {
                vec![
                    rng.random::<f64>() * 5.0,
                    rng.random::<f64>(),
                    (t % 8) as f64,
                    rng.random::<f64>() * 9.0,
                ]
            })
            .collect();
        let panel = Panel::new(
            cfg.schema.clone(),
            vec![Entity {
                name: "A".into(),
                static_ids: vec![1],
                t0: 0,
                rows,
            }],
        )
        .unwrap();
        let stats = NormStats::fit(&panel, 8).unwrap();
        let set = predict(&model, &store, &stats, &panel, 0, 4).unwrap();
        let norm = stats.apply(&panel).unwrap();
        let enc = norm
            .encode(ForecastSample { entity: 0, anchor: 4 }, cfg.k, cfg.tau)
            .unwrap();
        let mut direct = model.forecast(&store, &[&enc], 1).unwrap().remove(0);
        denormalize(&mut direct, &cfg, &stats, "A").unwrap();
        assert_eq!(set, direct);
        assert!(matches!(
            predict(&model, &store, &stats, &panel, 0, 8),
            Err(Error::InsufficientHistory { .. })
        ));
    }
}
