//! Parameters, forward passes, loss and reverse-mode gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cell::{lstm_backward_seq, lstm_forward_seq, lstm_step, CellCache, LstmParams};
use super::tensor::{add_assign, argmax, softmax, Matrix};
use super::vocab::{Vocabulary, EOS, PAD, SOS};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::pairing::TrainingPair;

/// Affine map `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Linear {
    fn zeros(out: usize, input: usize) -> Self {
        Linear { w: Matrix::zeros(out, input), b: vec![0.0; out] }
    }

    fn uniform(out: usize, input: usize, range: f64, rng: &mut ChaCha8Rng) -> Self {
        use rand::Rng;
        let w = Matrix::uniform(out, input, range, rng);
        let b = (0..out).map(|_| rng.gen_range(-range..=range)).collect();
        Linear { w, b }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.b.clone();
        self.w.mul_vec_add(x, &mut y);
        y
    }
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    /// `V × E`, shared by encoder and decoder inputs.
    pub embedding: Matrix,
    pub encoder_fwd: Vec<LstmParams>,
    pub encoder_bwd: Vec<LstmParams>,
    /// Per decoder layer: `h₀ = tanh(W s + b)` from the `2H` encoder summary.
    pub init_h: Vec<Linear>,
    /// Per decoder layer: `c₀ = W s + b`.
    pub init_c: Vec<Linear>,
    pub decoder: Vec<LstmParams>,
    /// `V × H` projection from the top decoder layer to vocabulary logits.
    pub output: Linear,
}

macro_rules! tensor_list {
    ($p:expr, $iter:ident, $($r:tt)+) => {{
        let p = $p;
        let mut out = Vec::new();
        out.push(("embedding".to_string(), vec![p.embedding.rows, p.embedding.cols], $($r)+ p.embedding.data));
        for (dir, layers) in [("fwd", $($r)+ p.encoder_fwd), ("bwd", $($r)+ p.encoder_bwd)] {
            for (l, cell) in layers.$iter().enumerate() {
                out.push((format!("encoder.{dir}.{l}.w"), vec![cell.w.rows, cell.w.cols], $($r)+ cell.w.data));
                out.push((format!("encoder.{dir}.{l}.u"), vec![cell.u.rows, cell.u.cols], $($r)+ cell.u.data));
                out.push((format!("encoder.{dir}.{l}.b"), vec![cell.b.len()], $($r)+ cell.b));
            }
        }
        for (kind, layers) in [("h", $($r)+ p.init_h), ("c", $($r)+ p.init_c)] {
            for (l, lin) in layers.$iter().enumerate() {
                out.push((format!("init.{kind}.{l}.w"), vec![lin.w.rows, lin.w.cols], $($r)+ lin.w.data));
                out.push((format!("init.{kind}.{l}.b"), vec![lin.b.len()], $($r)+ lin.b));
            }
        }
        for (l, cell) in p.decoder.$iter().enumerate() {
            out.push((format!("decoder.{l}.w"), vec![cell.w.rows, cell.w.cols], $($r)+ cell.w.data));
            out.push((format!("decoder.{l}.u"), vec![cell.u.rows, cell.u.cols], $($r)+ cell.u.data));
            out.push((format!("decoder.{l}.b"), vec![cell.b.len()], $($r)+ cell.b));
        }
        out.push(("output.w".to_string(), vec![p.output.w.rows, p.output.w.cols], $($r)+ p.output.w.data));
        out.push(("output.b".to_string(), vec![p.output.b.len()], $($r)+ p.output.b));
        out
    }};
}

impl Parameters {
    /// Shapes implied by a configuration and vocabulary size.
    pub fn zeros(config: &ModelConfig, vocab_size: usize) -> Self {
        Self::build(config, vocab_size, None)
    }

    /// Uniform initialisation in `±1/√H` from the configured seed.
    pub fn initialise(config: &ModelConfig, vocab_size: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Self::build(config, vocab_size, Some(&mut rng));
        let h = config.hidden_units;
        let cells = params.encoder_fwd.iter_mut().chain(&mut params.encoder_bwd).chain(&mut params.decoder);
        for cell in cells {
            // Gate blocks are stacked i, f, o, g.
            for b in &mut cell.b[h..2 * h] {
                *b += config.forget_bias;
            }
        }
        params
    }

    fn build(config: &ModelConfig, v: usize, mut rng: Option<&mut ChaCha8Rng>) -> Self {
        let (e, h) = (config.embedding_dim, config.hidden_units);
        let range = 1.0 / (h as f64).sqrt();
        let matrix = |rows: usize, cols: usize, rng: &mut Option<&mut ChaCha8Rng>| match rng {
            Some(r) => Matrix::uniform(rows, cols, range, r),
            None => Matrix::zeros(rows, cols),
        };
        let cell = |input: usize, rng: &mut Option<&mut ChaCha8Rng>| match rng {
            Some(r) => LstmParams::uniform(input, h, range, r),
            None => LstmParams::zeros(input, h),
        };
        let linear = |out: usize, input: usize, rng: &mut Option<&mut ChaCha8Rng>| match rng {
            Some(r) => Linear::uniform(out, input, range, r),
            None => Linear::zeros(out, input),
        };
        let embedding = matrix(v, e, &mut rng);
        let mut encoder_fwd = Vec::new();
        let mut encoder_bwd = Vec::new();
        for l in 0..config.encoder_layers {
            let input = if l == 0 { e } else { 2 * h };
            encoder_fwd.push(cell(input, &mut rng));
            encoder_bwd.push(cell(input, &mut rng));
        }
        let init_h = (0..config.decoder_layers).map(|_| linear(h, 2 * h, &mut rng)).collect();
        let init_c = (0..config.decoder_layers).map(|_| linear(h, 2 * h, &mut rng)).collect();
        let decoder = (0..config.decoder_layers).map(|l| cell(if l == 0 { e } else { h }, &mut rng)).collect();
        let output = linear(v, h, &mut rng);
        Parameters { embedding, encoder_fwd, encoder_bwd, init_h, init_c, decoder, output }
    }

    /// Named tensors with their shapes, in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &Vec<f64>)> {
        tensor_list!(self, iter, &)
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, Vec<usize>, &mut Vec<f64>)> {
        tensor_list!(self, iter_mut, &mut)
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, d)| d.iter().all(|v| v.is_finite()))
    }

    /// Euclidean norm over every tensor.
    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, _, d)| d.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, _, d) in self.tensors_mut() {
            d.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Decoder initial state derived from an encoded input.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    /// `[h_fwd(last); h_bwd(first)]` of the top encoder layer, `2H` long.
    pub summary: Vec<f64>,
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    /// One `2H` vector per input position: `[forward; backward]`.
    pub outputs: Vec<Vec<f64>>,
    pub final_state: DecoderState,
}

/// A training pair mapped to vocabulary indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncodedPair {
    pub input: Vec<usize>,
    pub target: Vec<usize>,
}

struct EncoderTrace {
    /// Per layer: forward caches by position, backward caches in processing
    /// order (last position first).
    layers: Vec<(Vec<CellCache>, Vec<CellCache>)>,
    outputs: Vec<Vec<f64>>,
    summary: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqModel {
    pub config: ModelConfig,
    pub vocabulary: Vocabulary,
    pub params: Parameters,
}

impl Seq2SeqModel {
    /// Freshly initialised model.
    pub fn new(config: ModelConfig, vocabulary: Vocabulary) -> Result<Self> {
        config.validate()?;
        let params = Parameters::initialise(&config, vocabulary.len());
        Ok(Seq2SeqModel { config, vocabulary, params })
    }

    /// Checks that every tensor has the shape implied by config and vocabulary.
    pub fn check_shapes(&self) -> Result<()> {
        let expected = Parameters::zeros(&self.config, self.vocabulary.len());
        let want = expected.tensors();
        let have = self.params.tensors();
        if want.len() != have.len() {
            return Err(Error::Shape(format!("expected {} tensors, found {}", want.len(), have.len())));
        }
        for ((wn, ws, _), (hn, hs, hd)) in want.iter().zip(&have) {
            if wn != hn || ws != hs || hd.len() != ws.iter().product::<usize>() {
                return Err(Error::Shape(format!("tensor {hn} {hs:?} does not match expected {wn} {ws:?}")));
            }
        }
        Ok(())
    }

    fn hidden(&self) -> usize {
        self.config.hidden_units
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.vocabulary.len()) {
            Some(i) => Err(Error::Shape(format!("token index {i} outside vocabulary of {}", self.vocabulary.len()))),
            None => Ok(()),
        }
    }

    pub fn encode_pair(&self, pair: &TrainingPair) -> EncodedPair {
        EncodedPair {
            input: self.vocabulary.encode(&pair.input.tokens),
            target: self.vocabulary.encode(&pair.target.tokens),
        }
    }

    fn embed(&self, ids: &[usize]) -> Vec<Vec<f64>> {
        ids.iter().map(|&i| self.params.embedding.row(i).to_vec()).collect()
    }

    fn encoder_forward(&self, ids: &[usize]) -> EncoderTrace {
        let h = self.hidden();
        let zeros = vec![0.0; h];
        let n = ids.len();
        let mut xs = self.embed(ids);
        let mut layers = Vec::with_capacity(self.config.encoder_layers);
        for l in 0..self.config.encoder_layers {
            let fwd = lstm_forward_seq(&self.params.encoder_fwd[l], &xs, &zeros, &zeros);
            let reversed: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
            let bwd = lstm_forward_seq(&self.params.encoder_bwd[l], &reversed, &zeros, &zeros);
            xs = (0..n).map(|t| [fwd[t].h.as_slice(), bwd[n - 1 - t].h.as_slice()].concat()).collect();
            layers.push((fwd, bwd));
        }
        let summary = match layers.last() {
            Some((fwd, bwd)) if n > 0 => [fwd[n - 1].h.as_slice(), bwd[n - 1].h.as_slice()].concat(),
            _ => vec![0.0; 2 * h],
        };
        EncoderTrace { layers, outputs: xs, summary }
    }

    fn initial_state(&self, summary: Vec<f64>) -> DecoderState {
        let h = self.params.init_h.iter().map(|lin| lin.apply(&summary).into_iter().map(f64::tanh).collect()).collect();
        let c = self.params.init_c.iter().map(|lin| lin.apply(&summary)).collect();
        DecoderState { summary, h, c }
    }

    /// Runs the bidirectional encoder and derives the decoder's initial state.
    pub fn encode(&self, ids: &[usize]) -> Result<Encoded> {
        self.check_ids(ids)?;
        let trace = self.encoder_forward(ids);
        Ok(Encoded { outputs: trace.outputs, final_state: self.initial_state(trace.summary) })
    }

    /// Encodes equal-width rows in lockstep. Trailing [`PAD`] entries are
    /// masked: they neither update the recurrent state nor produce outputs.
    pub fn encode_padded(&self, batch: &[Vec<usize>]) -> Result<Vec<Encoded>> {
        let width = batch.first().map_or(0, Vec::len);
        let mut lengths = Vec::with_capacity(batch.len());
        for row in batch {
            if row.len() != width {
                return Err(Error::Shape(format!("padded rows must share width {width}, got {}", row.len())));
            }
            self.check_ids(row)?;
            let len = row.iter().position(|&i| i == PAD).unwrap_or(width);
            if row[len..].iter().any(|&i| i != PAD) {
                return Err(Error::Shape("padding must be trailing".into()));
            }
            lengths.push(len);
        }
        let h = self.hidden();
        let mut xs: Vec<Vec<Vec<f64>>> = batch.iter().map(|row| self.embed(row)).collect();
        let mut summaries = vec![vec![0.0; 2 * h]; batch.len()];
        for l in 0..self.config.encoder_layers {
            let mut outs: Vec<Vec<Vec<f64>>> = lengths.iter().map(|&n| vec![Vec::new(); n]).collect();
            for (dir, cell) in [(0, &self.params.encoder_fwd[l]), (1, &self.params.encoder_bwd[l])] {
                let mut state = vec![(vec![0.0; h], vec![0.0; h]); batch.len()];
                for step in 0..width {
                    let t = if dir == 0 { step } else { width - 1 - step };
                    for (b, &n) in lengths.iter().enumerate() {
                        if t >= n {
                            continue;
                        }
                        let cache = lstm_step(cell, &xs[b][t], &state[b].0, &state[b].1);
                        // The forward pass runs first, so the backward half lands second.
                        outs[b][t].extend_from_slice(&cache.h);
                        state[b] = (cache.h, cache.c);
                    }
                }
                for (b, (hs, _)) in state.into_iter().enumerate() {
                    if l + 1 == self.config.encoder_layers {
                        summaries[b][dir * h..(dir + 1) * h].copy_from_slice(&hs);
                    }
                }
            }
            xs = outs;
        }
        Ok(xs
            .into_iter()
            .zip(summaries)
            .map(|(outputs, summary)| Encoded { outputs, final_state: self.initial_state(summary) })
            .collect())
    }

    fn decoder_step(&self, state: &mut DecoderState, token: usize) -> Vec<f64> {
        let mut x = self.params.embedding.row(token).to_vec();
        for (l, cell) in self.params.decoder.iter().enumerate() {
            let cache = lstm_step(cell, &x, &state.h[l], &state.c[l]);
            state.h[l] = cache.h;
            state.c[l] = cache.c;
            x = state.h[l].clone();
        }
        self.params.output.apply(&x)
    }

    /// Greedy decoding: argmax per step (lowest index on ties) until EOS or
    /// `max_decode_length` tokens. SOS/EOS are not returned.
    pub fn decode_greedy(&self, state: &DecoderState) -> Vec<usize> {
        self.decode_trace(state).0
    }

    /// Greedy decoding that also returns the softmax distribution of every step.
    pub fn decode_trace(&self, state: &DecoderState) -> (Vec<usize>, Vec<Vec<f64>>) {
        let mut state = state.clone();
        let mut out = Vec::new();
        let mut dists = Vec::new();
        let mut prev = SOS;
        while out.len() < self.config.max_decode_length {
            let logits = self.decoder_step(&mut state, prev);
            let next = argmax(&logits);
            dists.push(softmax(&logits));
            if next == EOS {
                break;
            }
            out.push(next);
            prev = next;
        }
        (out, dists)
    }

    /// Encode then decode greedily.
    pub fn translate(&self, ids: &[usize]) -> Result<Vec<usize>> {
        Ok(self.decode_greedy(&self.encode(ids)?.final_state))
    }

    /// Token-level convenience around [`Self::translate`]; unknown tokens map to UNK.
    pub fn translate_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<String>> {
        let ids = self.vocabulary.encode(tokens);
        Ok(self.vocabulary.decode(&self.translate(&ids)?))
    }

    /// Mean teacher-forced cross-entropy over `target + EOS`.
    pub fn pair_loss(&self, pair: &EncodedPair) -> Result<f64> {
        self.check_ids(&pair.input)?;
        self.check_ids(&pair.target)?;
        Ok(self.pair_forward_backward(pair, None))
    }

    /// Mean of per-pair losses.
    pub fn loss(&self, batch: &[EncodedPair]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let mut total = 0.0;
        for pair in batch {
            total += self.pair_loss(pair)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Loss of [`Self::loss`] together with its gradient w.r.t. every parameter.
    pub fn loss_and_gradients(&self, batch: &[EncodedPair]) -> Result<(f64, Parameters)> {
        if batch.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let mut grads = Parameters::zeros(&self.config, self.vocabulary.len());
        let weight = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for pair in batch {
            self.check_ids(&pair.input)?;
            self.check_ids(&pair.target)?;
            total += self.pair_forward_backward(pair, Some((&mut grads, weight)));
        }
        Ok((total * weight, grads))
    }

    /// Forward pass of one pair; with `grads`, accumulates `weight × ∂loss/∂θ`.
    fn pair_forward_backward(&self, pair: &EncodedPair, grads: Option<(&mut Parameters, f64)>) -> f64 {
        let h = self.hidden();
        let p = &self.params;
        let enc = self.encoder_forward(&pair.input);
        let state = self.initial_state(enc.summary.clone());

        let dec_in: Vec<usize> = std::iter::once(SOS).chain(pair.target.iter().copied()).collect();
        let dec_out: Vec<usize> = pair.target.iter().copied().chain(std::iter::once(EOS)).collect();
        let steps = dec_in.len();

        let mut layer_caches: Vec<Vec<CellCache>> = Vec::with_capacity(p.decoder.len());
        let mut xs = self.embed(&dec_in);
        for (l, cell) in p.decoder.iter().enumerate() {
            let caches = lstm_forward_seq(cell, &xs, &state.h[l], &state.c[l]);
            xs = caches.iter().map(|c| c.h.clone()).collect();
            layer_caches.push(caches);
        }
        let mut loss = 0.0;
        let mut probs = Vec::with_capacity(steps);
        for (t, top) in xs.iter().enumerate() {
            let logits = p.output.apply(top);
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            loss += lse - logits[dec_out[t]];
            probs.push(softmax(&logits));
        }
        loss /= steps as f64;

        let Some((g, weight)) = grads else { return loss };
        let scale = weight / steps as f64;

        // Output projection.
        let mut ext: Vec<Vec<f64>> = Vec::with_capacity(steps);
        for (t, mut d) in probs.into_iter().enumerate() {
            d[dec_out[t]] -= 1.0;
            d.iter_mut().for_each(|v| *v *= scale);
            g.output.w.add_outer(&d, &xs[t]);
            add_assign(&mut g.output.b, &d);
            let mut dh = vec![0.0; h];
            p.output.w.tmul_vec_add(&d, &mut dh);
            ext.push(dh);
        }

        // Decoder stack, top to bottom.
        let mut dh0 = vec![Vec::new(); p.decoder.len()];
        let mut dc0 = vec![Vec::new(); p.decoder.len()];
        for l in (0..p.decoder.len()).rev() {
            let (dxs, dh, dc) =
                lstm_backward_seq(&p.decoder[l], &mut g.decoder[l], &layer_caches[l], &ext, vec![0.0; h], vec![0.0; h]);
            dh0[l] = dh;
            dc0[l] = dc;
            ext = dxs;
        }
        for (t, &tok) in dec_in.iter().enumerate() {
            add_assign(g.embedding.row_mut(tok), &ext[t]);
        }

        // Initial-state projections.
        let mut ds = vec![0.0; 2 * h];
        for l in 0..p.decoder.len() {
            let dpre: Vec<f64> = dh0[l].iter().zip(&state.h[l]).map(|(d, hv)| d * (1.0 - hv * hv)).collect();
            g.init_h[l].w.add_outer(&dpre, &state.summary);
            add_assign(&mut g.init_h[l].b, &dpre);
            p.init_h[l].w.tmul_vec_add(&dpre, &mut ds);
            g.init_c[l].w.add_outer(&dc0[l], &state.summary);
            add_assign(&mut g.init_c[l].b, &dc0[l]);
            p.init_c[l].w.tmul_vec_add(&dc0[l], &mut ds);
        }

        // Encoder stack, top to bottom.
        let n = pair.input.len();
        if n == 0 {
            return loss;
        }
        let mut ext_f = vec![vec![0.0; h]; n];
        let mut ext_b = vec![vec![0.0; h]; n];
        add_assign(&mut ext_f[n - 1], &ds[..h]);
        add_assign(&mut ext_b[n - 1], &ds[h..]);
        for l in (0..self.config.encoder_layers).rev() {
            let (fwd, bwd) = &enc.layers[l];
            let (dx_f, _, _) =
                lstm_backward_seq(&p.encoder_fwd[l], &mut g.encoder_fwd[l], fwd, &ext_f, vec![0.0; h], vec![0.0; h]);
            let (dx_b, _, _) =
                lstm_backward_seq(&p.encoder_bwd[l], &mut g.encoder_bwd[l], bwd, &ext_b, vec![0.0; h], vec![0.0; h]);
            let dpos: Vec<Vec<f64>> = (0..n)
                .map(|t| {
                    let mut d = dx_f[t].clone();
                    add_assign(&mut d, &dx_b[n - 1 - t]);
                    d
                })
                .collect();
            if l == 0 {
                for (t, &tok) in pair.input.iter().enumerate() {
                    add_assign(g.embedding.row_mut(tok), &dpos[t]);
                }
            } else {
                for t in 0..n {
                    ext_f[t] = dpos[t][..h].to_vec();
                    ext_b[n - 1 - t] = dpos[t][h..].to_vec();
                }
            }
        }
        loss
    }
}
