use crate::corpus::{WordEmbeddings, PAD_INDEX};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};

use super::{Gradients, Model};

/// Encoder inputs for one minibatch, one entry per slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchInputs {
    pub images: Vec<Vec<f64>>,
    /// Vocabulary indices, unpadded.
    pub texts: Vec<Vec<usize>>,
    pub users: Vec<usize>,
}

/// Common-space embeddings per slot; also the shape of upstream gradients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchEmbeddings {
    pub image: Vec<Vec<f64>>,
    pub text: Vec<Vec<f64>>,
    pub user: Vec<Vec<f64>>,
}

impl BatchEmbeddings {
    pub fn zeros_like(other: &BatchEmbeddings) -> Self {
        let z = |v: &Vec<Vec<f64>>| v.iter().map(|x| vec![0.0; x.len()]).collect();
        BatchEmbeddings {
            image: z(&other.image),
            text: z(&other.text),
            user: z(&other.user),
        }
    }
}

/// What the text encoder backward pass needs from the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TextActivation {
    /// Padded word-vector sequence, `max_sentence_len × word_dim`.
    sequence: Vec<f64>,
    /// Concatenated pooled block outputs (after the rectifier).
    pub pooled: Vec<f64>,
    /// Window start that attained the max, per filter.
    argmax: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub inputs: BatchInputs,
    text_acts: Vec<TextActivation>,
    pub embeddings: BatchEmbeddings,
}

impl Model {
    pub fn encode_image(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.config.image_dim {
            return Err(Error::DimensionMismatch {
                context: "image features".into(),
                expected: self.config.image_dim,
                actual: features.len(),
            });
        }
        Ok(self.params.image_proj.forward(features))
    }

    pub fn encode_user(&self, user: usize) -> Result<Vec<f64>> {
        if user >= self.user_count() {
            return Err(Error::OutOfRange {
                what: "user table",
                index: user,
                size: self.user_count(),
            });
        }
        Ok(self.params.user_proj.forward(self.params.user_table.row(user)))
    }

    pub fn encode_text(&self, tokens: &[usize], words: &WordEmbeddings) -> Result<Vec<f64>> {
        self.text_forward(tokens, words).map(|(x, _)| x)
    }

    /// Convolution per block over the padded word-vector sequence (stride 1),
    /// rectifier, max over time, concatenation, then the text projection.
    pub fn text_forward(
        &self,
        tokens: &[usize],
        words: &WordEmbeddings,
    ) -> Result<(Vec<f64>, TextActivation)> {
        if words.len() <= 1 {
            return Err(Error::Empty("vocabulary"));
        }
        let d = self.config.word_dim;
        if words.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "word embeddings".into(),
                expected: d,
                actual: words.dim(),
            });
        }
        let len = self.config.max_sentence_len;
        let mut sequence = Vec::with_capacity(len * d);
        for pos in 0..len {
            let tok = tokens.get(pos).copied().unwrap_or(PAD_INDEX);
            if tok >= words.len() {
                return Err(Error::OutOfRange {
                    what: "vocabulary",
                    index: tok,
                    size: words.len(),
                });
            }
            sequence.extend_from_slice(words.vector(tok));
        }

        let mut pooled = Vec::with_capacity(self.config.text_feature_dim());
        let mut argmax = Vec::with_capacity(self.config.text_feature_dim());
        for (block, conv) in self.config.conv_blocks.iter().zip(&self.params.conv) {
            let span = block.width * d;
            let windows = len - block.width + 1;
            for k in 0..block.filters {
                let filter = conv.weight.row(k);
                let bias = conv.bias.as_ref().map_or(0.0, |b| b[k]);
                let mut best = f64::NEG_INFINITY;
                let mut best_t = 0;
                for t in 0..windows {
                    let a = dot(filter, &sequence[t * d..t * d + span]) + bias;
                    if a > best {
                        best = a;
                        best_t = t;
                    }
                }
                pooled.push(best.max(0.0));
                argmax.push(best_t);
            }
        }
        let x = self.params.text_proj.forward(&pooled);
        Ok((
            x,
            TextActivation {
                sequence,
                pooled,
                argmax,
            },
        ))
    }

    /// Embeds every slot of a minibatch, keeping what backward needs.
    pub fn forward(&self, inputs: BatchInputs, words: Option<&WordEmbeddings>) -> Result<ForwardPass> {
        let image = inputs
            .images
            .iter()
            .map(|f| self.encode_image(f))
            .collect::<Result<Vec<_>>>()?;
        let user = inputs
            .users
            .iter()
            .map(|&u| self.encode_user(u))
            .collect::<Result<Vec<_>>>()?;
        let mut text = Vec::with_capacity(inputs.texts.len());
        let mut text_acts = Vec::with_capacity(inputs.texts.len());
        if !inputs.texts.is_empty() {
            let words = words.ok_or(Error::Empty("word embeddings"))?;
            for t in &inputs.texts {
                let (x, act) = self.text_forward(t, words)?;
                text.push(x);
                text_acts.push(act);
            }
        }
        Ok(ForwardPass {
            inputs,
            text_acts,
            embeddings: BatchEmbeddings { image, text, user },
        })
    }

    /// Exact gradients of all parameters given upstream gradients on the
    /// batch embeddings. Only user rows present in the batch are touched.
    pub fn backward(&self, pass: &ForwardPass, upstream: &BatchEmbeddings) -> Result<Gradients> {
        let check = |what: &str, want: usize, got: usize| {
            if want != got {
                Err(Error::MissingCache(format!(
                    "{what}: {got} upstream gradients for {want} cached slots"
                )))
            } else {
                Ok(())
            }
        };
        check("image", pass.inputs.images.len(), upstream.image.len())?;
        check("text", pass.text_acts.len(), upstream.text.len())?;
        check("user", pass.inputs.users.len(), upstream.user.len())?;

        let p = &self.params;
        let mut grads = Gradients::zeros_like(p);
        let g = &mut grads.grad;
        let is_zero = |v: &[f64]| v.iter().all(|&x| x == 0.0);

        for (f, dy) in pass.inputs.images.iter().zip(&upstream.image) {
            if !is_zero(dy) {
                p.image_proj.accumulate(&mut g.image_proj, f, dy);
            }
        }

        let d = self.config.word_dim;
        let mut dh = vec![0.0; self.config.text_feature_dim()];
        for (act, dy) in pass.text_acts.iter().zip(&upstream.text) {
            if is_zero(dy) {
                continue;
            }
            p.text_proj.accumulate(&mut g.text_proj, &act.pooled, dy);
            dh.fill(0.0);
            p.text_proj.weight.matvec_t_acc(dy, &mut dh);
            let mut offset = 0;
            for (bi, block) in self.config.conv_blocks.iter().enumerate() {
                let span = block.width * d;
                let gc = &mut g.conv[bi];
                for k in 0..block.filters {
                    let j = offset + k;
                    if act.pooled[j] <= 0.0 || dh[j] == 0.0 {
                        continue;
                    }
                    let t = act.argmax[j];
                    axpy(dh[j], &act.sequence[t * d..t * d + span], gc.weight.row_mut(k));
                    if let Some(b) = &mut gc.bias {
                        b[k] += dh[j];
                    }
                }
                offset += block.filters;
            }
        }

        for (&u, dy) in pass.inputs.users.iter().zip(&upstream.user) {
            if is_zero(dy) {
                continue;
            }
            let row = p.user_table.row(u);
            p.user_proj.accumulate(&mut g.user_proj, row, dy);
            p.user_proj.weight.matvec_t_acc(dy, g.user_table.row_mut(u));
            grads.touched_users.insert(u);
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;
    use crate::linalg::Matrix;
    use crate::model::{ConvBlockConfig, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            dim: 3,
            image_dim: 2,
            word_dim: 2,
            user_dim: 3,
            conv_blocks: vec![ConvBlockConfig { width: 2, filters: 1 }],
            max_sentence_len: 3,
            bias: true,
        }
    }

    fn toy_words() -> WordEmbeddings {
        // pad, a, b, c
        WordEmbeddings::new(Matrix::from_vec(
            4,
            2,
            vec![0.0, 0.0, 1.0, 2.0, -1.0, 0.5, 3.0, -1.0],
        ))
        .unwrap()
    }

    #[test]
    fn identity_image_projection() {
        let mut cfg = tiny_config();
        cfg.image_dim = 3;
        let mut m = Model::new(cfg, 1, 0).unwrap();
        m.params.image_proj.weight = Matrix::identity(3);
        assert_eq!(m.encode_image(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(m.encode_image(&[1.0]).is_err());
    }

    #[test]
    fn image_matvec_by_hand() {
        let mut m = Model::new(tiny_config(), 1, 0).unwrap();
        m.params.image_proj.weight = Matrix::from_vec(3, 2, vec![0.5, -1.0, 2.0, 0.25, -3.0, 1.5]);
        // [0.5*1 - 1*2, 2*1 + 0.25*2, -3*1 + 1.5*2]
        assert_eq!(m.encode_image(&[1.0, 2.0]).unwrap(), vec![-1.5, 2.5, 0.0]);
    }

    #[test]
    fn default_shapes() {
        let cfg = ModelConfig::default();
        let m = Model::new(cfg, 2, 1).unwrap();
        assert_eq!(m.encode_image(&vec![0.1; 2048]).unwrap().len(), 1024);
        assert_eq!(m.params.user_table.cols(), 300);
        assert_eq!(m.encode_user(1).unwrap().len(), 1024);
        assert_eq!(m.params.text_proj.weight.cols(), 1024);
    }

    #[test]
    fn user_identity_projection_and_bounds() {
        let mut m = Model::new(tiny_config(), 4, 0).unwrap();
        m.params.user_proj.weight = Matrix::identity(3);
        assert_eq!(m.encode_user(2).unwrap(), m.params.user_table.row(2).to_vec());
        assert!(matches!(m.encode_user(4), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn all_pad_sentence_gives_projection_bias() {
        let mut m = Model::new(tiny_config(), 1, 0).unwrap();
        m.params.text_proj.bias = Some(vec![0.1, -0.2, 0.3]);
        let (x, act) = m.text_forward(&[], &toy_words()).unwrap();
        assert!(act.pooled.iter().all(|&v| v == 0.0));
        assert_eq!(x, vec![0.1, -0.2, 0.3]);
    }

    #[test]
    fn hand_convolution() {
        let mut m = Model::new(tiny_config(), 1, 0).unwrap();
        // filter over windows of two words: [w_t ; w_{t+1}]
        m.params.conv[0].weight = Matrix::from_vec(1, 4, vec![1.0, 0.0, 0.0, 1.0]);
        m.params.conv[0].bias = Some(vec![0.0]);
        m.params.text_proj.weight = Matrix::from_vec(3, 1, vec![1.0, 2.0, 0.0]);
        m.params.text_proj.bias = Some(vec![0.0; 3]);
        // tokens a b c: windows (a,b) -> 1 + 0.5 = 1.5, (b,c) -> -1 + -1 = -2
        let (x, act) = m.text_forward(&[1, 2, 3], &toy_words()).unwrap();
        assert_eq!(act.pooled, vec![1.5]);
        assert_eq!(x, vec![1.5, 3.0, 0.0]);
    }

    #[test]
    fn empty_vocabulary_rejected() {
        let m = Model::new(tiny_config(), 1, 0).unwrap();
        let words = WordEmbeddings::for_vocabulary(&Vocabulary::from_words(Vec::<String>::new()), &Default::default(), 2);
        assert!(matches!(m.text_forward(&[], &words), Err(Error::Empty(_))));
    }

    #[test]
    fn trailing_pads_do_not_change_output() {
        let m = Model::new(tiny_config(), 1, 3).unwrap();
        let w = toy_words();
        let a = m.encode_text(&[1, 3], &w).unwrap();
        let b = m.encode_text(&[1, 3, PAD_INDEX], &w).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn linear_in_inputs_without_bias() {
        let mut cfg = tiny_config();
        cfg.bias = false;
        let m = Model::new(cfg, 3, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let a: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (al, be) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| al * x + be * y).collect();
            let lhs = m.encode_image(&mix).unwrap();
            let ea = m.encode_image(&a).unwrap();
            let eb = m.encode_image(&b).unwrap();
            for i in 0..3 {
                assert!((lhs[i] - (al * ea[i] + be * eb[i])).abs() < 1e-12);
            }
            // user encoder is linear in the table row
            let mut m2 = m.clone();
            m2.params.user_table.row_mut(0).copy_from_slice(&[a[0], a[1], 0.5]);
            m2.params.user_table.row_mut(1).copy_from_slice(&[b[0], b[1], -0.5]);
            let row2: Vec<f64> = (0..3)
                .map(|i| al * m2.params.user_table.get(0, i) + be * m2.params.user_table.get(1, i))
                .collect();
            m2.params.user_table.row_mut(2).copy_from_slice(&row2);
            let (u0, u1, u2) = (
                m2.encode_user(0).unwrap(),
                m2.encode_user(1).unwrap(),
                m2.encode_user(2).unwrap(),
            );
            for i in 0..3 {
                assert!((u2[i] - (al * u0[i] + be * u1[i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = Model::new(tiny_config(), 3, 0).unwrap();
        let inputs = BatchInputs {
            images: vec![vec![1.0, 2.0]],
            texts: vec![vec![1, 2]],
            users: vec![0, 2],
        };
        let pass = m.forward(inputs, Some(&toy_words())).unwrap();
        let up = BatchEmbeddings::zeros_like(&pass.embeddings);
        let g = m.backward(&pass, &up).unwrap();
        assert_eq!(g.grad, m.params.zeros_like());
        assert!(g.touched_users.is_empty());
    }

    #[test]
    fn user_gradient_is_row_sparse() {
        let m = Model::new(tiny_config(), 5, 0).unwrap();
        let pass = m
            .forward(BatchInputs { users: vec![3], ..Default::default() }, None)
            .unwrap();
        let up = BatchEmbeddings {
            user: vec![vec![1.0, -1.0, 0.5]],
            ..Default::default()
        };
        let g = m.backward(&pass, &up).unwrap();
        for u in 0..5 {
            let nonzero = g.grad.user_table.row(u).iter().any(|&x| x != 0.0);
            assert_eq!(nonzero, u == 3, "row {u}");
        }
        assert_eq!(g.touched_users.iter().copied().collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn mismatched_upstream_is_missing_cache() {
        let m = Model::new(tiny_config(), 2, 0).unwrap();
        let pass = m.forward(BatchInputs::default(), None).unwrap();
        let up = BatchEmbeddings {
            text: vec![vec![0.0; 3]],
            ..Default::default()
        };
        assert!(matches!(m.backward(&pass, &up), Err(Error::MissingCache(_))));
    }
}
