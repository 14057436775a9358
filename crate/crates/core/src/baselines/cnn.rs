//! Small from-scratch CNN classifier.
//!
//! Architecture: three `conv3x3 + ReLU + maxpool2` stages (32/64/128
//! channels), a 1x1 conv to 256 channels, global average pooling, ReLU and
//! a dense layer to the five categories. The pooled 256-vector is the
//! penultimate feature used by the Hopfield hybrid; the output of the second
//! pooling stage is the mid-level feature map used for subpart clustering.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::synthgen::SceneRecord;
use crate::tensor::{
    conv2d, conv2d_backward, dense, dense_backward, global_avg_pool, global_avg_pool_backward,
    kaiming_normal, maxpool, maxpool_backward, relu, relu_backward, softmax, softmax_ce,
    Checkpoint, LayerParams, Sgd, SgdConfig, Tensor,
};
use crate::NUM_CATEGORIES;

pub const WIDTHS: [usize; 3] = [32, 64, 128];
pub const PENULTIMATE: usize = 256;
/// Channels of the mid-level feature tap (after the second pool).
pub const TAP_CHANNELS: usize = 64;
/// Pixel stride of the feature tap.
pub const TAP_STRIDE: usize = 4;
const MODEL_TAG: &str = "baseline-cnn";

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineCnn {
    params: LayerParams,
}

struct Stage {
    input: Tensor,
    act: Tensor,
    argmax: Vec<usize>,
}

struct Trace {
    stages: Vec<Stage>,
    pooled: Tensor,
    pre_gap: Tensor,
    hidden: Tensor,
    logits: Tensor,
}

fn conv_name(i: usize) -> (String, String) {
    (format!("conv{}.w", i + 1), format!("conv{}.b", i + 1))
}

impl BaselineCnn {
    pub fn new(seed: u64) -> Self {
        let mut rng = stream(seed, "cnn-init", 0);
        let mut params = LayerParams::new();
        let mut c_in = 3;
        for (i, &c_out) in WIDTHS.iter().enumerate() {
            let (w, b) = conv_name(i);
            params
                .insert(w, kaiming_normal(&[c_out, c_in, 3, 3], c_in * 9, &mut rng))
                .expect("unique");
            params.insert(b, Tensor::zeros(&[c_out])).expect("unique");
            c_in = c_out;
        }
        params
            .insert(
                "conv4.w",
                kaiming_normal(&[PENULTIMATE, c_in, 1, 1], c_in, &mut rng),
            )
            .expect("unique");
        params
            .insert("conv4.b", Tensor::zeros(&[PENULTIMATE]))
            .expect("unique");
        params
            .insert(
                "fc.w",
                kaiming_normal(&[NUM_CATEGORIES, PENULTIMATE], PENULTIMATE, &mut rng),
            )
            .expect("unique");
        params
            .insert("fc.b", Tensor::zeros(&[NUM_CATEGORIES]))
            .expect("unique");
        Self { params }
    }

    pub fn params(&self) -> &LayerParams {
        &self.params
    }

    fn p(&self, name: &str) -> &Tensor {
        self.params.get(name).expect("parameter exists")
    }

    fn normalize(image: &Tensor) -> Result<Tensor> {
        let (c, h, w) = image.dims3("BaselineCnn")?;
        if c != 3 || h < 32 || w < 32 {
            return Err(Error::shape(
                "BaselineCnn",
                format!("expected [3,H,W] with H,W >= 32, got {:?}", image.shape()),
            ));
        }
        Ok(image.map(|v| v - 0.5))
    }

    fn run_stages(&self, image: &Tensor, upto: usize) -> Result<(Vec<Stage>, Tensor)> {
        let mut x = Self::normalize(image)?;
        let mut stages = Vec::with_capacity(upto);
        for i in 0..upto {
            let (w, b) = conv_name(i);
            let act = relu(&conv2d(&x, self.p(&w), self.p(&b), 1)?);
            let (pooled, argmax) = maxpool(&act, 2, 2)?;
            stages.push(Stage {
                input: x,
                act,
                argmax,
            });
            x = pooled;
        }
        Ok((stages, x))
    }

    fn trace(&self, image: &Tensor) -> Result<Trace> {
        let (stages, pooled) = self.run_stages(image, WIDTHS.len())?;
        let pre_gap = conv2d(&pooled, self.p("conv4.w"), self.p("conv4.b"), 0)?;
        let hidden = relu(&global_avg_pool(&pre_gap)?);
        let logits = dense(&hidden, self.p("fc.w"), self.p("fc.b"))?;
        Ok(Trace {
            stages,
            pooled,
            pre_gap,
            hidden,
            logits,
        })
    }

    /// Mid-level feature map `[64, H/4, W/4]` after the second pooling stage.
    pub fn features(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.run_stages(image, 2)?.1)
    }

    /// Penultimate 256-vector (pooled, after ReLU).
    pub fn penultimate(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.trace(image)?.hidden)
    }

    pub fn logits(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.trace(image)?.logits)
    }

    pub fn predict(&self, image: &Tensor) -> Result<Vec<f64>> {
        Ok(softmax(self.logits(image)?.data()))
    }

    /// Loss and parameter gradients for one labelled image.
    pub fn loss_and_grads(&self, image: &Tensor, label: usize) -> Result<(f64, LayerParams)> {
        let t = self.trace(image)?;
        let ce = softmax_ce(&t.logits, label)?;
        let mut grads = self.params.zeros_like();

        let fc = dense_backward(&t.hidden, self.p("fc.w"), &ce.grad);
        grads.accumulate("fc.w", &fc.weights);
        grads.accumulate("fc.b", &fc.bias);
        let g_gap = relu_backward(&t.hidden, &fc.input);
        let g_pre = global_avg_pool_backward(t.pre_gap.shape(), &g_gap);
        let c4 = conv2d_backward(&t.pooled, self.p("conv4.w"), &g_pre, 0, true)?;
        grads.accumulate("conv4.w", &c4.kernel);
        grads.accumulate("conv4.b", &c4.bias);

        let mut g = c4.input.expect("requested");
        for (i, st) in t.stages.iter().enumerate().rev() {
            let g_act = maxpool_backward(st.act.shape(), &st.argmax, &g);
            let g_z = relu_backward(&st.act, &g_act);
            let (w, b) = conv_name(i);
            let cg = conv2d_backward(&st.input, self.p(&w), &g_z, 1, i > 0)?;
            grads.accumulate(&w, &cg.kernel);
            grads.accumulate(&b, &cg.bias);
            if let Some(gi) = cg.input {
                g = gi;
            }
        }
        Ok((ce.loss, grads))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.params.clone()).with_meta("model", MODEL_TAG)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta.get("model").map(String::as_str) != Some(MODEL_TAG) {
            return Err(Error::InvalidArgument(
                "checkpoint is not a baseline CNN".into(),
            ));
        }
        let reference = Self::new(0);
        for (name, t) in reference.params.iter() {
            let got = ck.tensors.require(name)?;
            if got.shape() != t.shape() {
                return Err(Error::shape(
                    "BaselineCnn::from_checkpoint",
                    format!("`{name}` is {:?}, expected {:?}", got.shape(), t.shape()),
                ));
            }
        }
        Ok(Self {
            params: ck.tensors.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CnnTrainConfig {
    pub sgd: SgdConfig,
    /// Crop side as a fraction of the canvas.
    pub crop_fraction: f32,
    /// Minimum share of the target mask a crop must contain.
    pub min_target_fraction: f32,
}

impl CnnTrainConfig {
    pub fn new(sgd: SgdConfig) -> Self {
        Self {
            sgd,
            crop_fraction: 0.75,
            min_target_fraction: 0.25,
        }
    }
}

/// Random square crop holding at least `min_fraction` of the target mask.
pub fn random_crop<R: Rng + ?Sized>(
    scene: &SceneRecord,
    side: usize,
    min_fraction: f32,
    rng: &mut R,
) -> Result<(usize, usize)> {
    let (h, w) = (scene.target_mask.height(), scene.target_mask.width());
    if side > h || side > w {
        return Err(Error::InvalidArgument(format!(
            "crop {side} exceeds {h}x{w}"
        )));
    }
    let total = scene.target_mask.count().max(1) as f32;
    let inside = |y0: usize, x0: usize| {
        let mut n = 0usize;
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                n += scene.target_mask.get(y, x) as usize;
            }
        }
        n as f32 / total
    };
    let mut best = (0, 0, -1.0f32);
    for _ in 0..20 {
        let (y0, x0) = (
            rng.random_range(0..=h - side),
            rng.random_range(0..=w - side),
        );
        let f = inside(y0, x0);
        if f >= min_fraction {
            return Ok((y0, x0));
        }
        if f > best.2 {
            best = (y0, x0, f);
        }
    }
    Ok((best.0, best.1))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
}

pub fn train_baseline_cnn(
    scenes: &[SceneRecord],
    cfg: &CnnTrainConfig,
) -> Result<(BaselineCnn, TrainLog)> {
    cfg.sgd.validate()?;
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("no training scenes".into()));
    }
    if scenes.iter().any(|s| s.occluder_mask.count() > 0) {
        return Err(Error::InvalidArgument(
            "baseline CNN must be trained on occlusion-free scenes".into(),
        ));
    }
    let mut model = BaselineCnn::new(cfg.sgd.seed);
    let mut sgd = Sgd::new(cfg.sgd.momentum);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    for epoch in 0..cfg.sgd.epochs {
        let mut rng = stream(cfg.sgd.seed, "cnn-epoch", epoch as u64);
        order.shuffle(&mut rng);
        let lr = cfg.sgd.lr_at(epoch);
        let mut total = 0.0;
        for batch in order.chunks(cfg.sgd.batch_size) {
            let mut grads = model.params.zeros_like();
            for &i in batch {
                let s = &scenes[i];
                let (_, h, w) = s.image.dims3("train_baseline_cnn")?;
                let side = ((h.min(w) as f32) * cfg.crop_fraction).round() as usize;
                let (y0, x0) = random_crop(s, side, cfg.min_target_fraction, &mut rng)?;
                let crop = s.image.crop3(y0, x0, side, side)?;
                let (loss, g) = model.loss_and_grads(&crop, s.category_id)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged(format!(
                        "baseline CNN loss {loss} in epoch {epoch}"
                    )));
                }
                total += loss;
                grads.add_scaled(&g, 1.0);
            }
            grads.scale(1.0 / batch.len() as f32);
            sgd.step(&mut model.params, &grads, lr)?;
        }
        let mean = total / scenes.len() as f64;
        log::info!("baseline cnn epoch {epoch}: loss {mean:.4}");
        log.epoch_loss.push(mean);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_check;

    fn image(seed: u64, h: usize, w: usize) -> Tensor {
        let mut rng = stream(seed, "img", 0);
        let data = (0..3 * h * w).map(|_| rng.random::<f32>()).collect();
        Tensor::new(vec![3, h, w], data).unwrap()
    }

    #[test]
    fn feature_tap_stride() {
        let net = BaselineCnn::new(1);
        let f = net.features(&image(1, 96, 96)).unwrap();
        assert_eq!(f.shape(), &[TAP_CHANNELS, 24, 24]);
    }

    #[test]
    fn variable_input_sizes_give_distributions() {
        let net = BaselineCnn::new(2);
        for (h, w) in [(32, 32), (40, 56), (96, 96)] {
            let p = net.predict(&image(3, h, w)).unwrap();
            assert_eq!(p.len(), NUM_CATEGORIES);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert!(net.predict(&image(3, 31, 40)).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = BaselineCnn::new(4);
        let img = image(5, 32, 32);
        let (_, grads) = net.loss_and_grads(&img, 2).unwrap();
        for name in ["fc.w", "conv4.w", "conv2.b", "conv1.w"] {
            let p0 = net.params.get(name).unwrap().clone();
            let g = grads.get(name).unwrap();
            // probe a handful of coordinates
            let idx: Vec<usize> = (0..p0.len())
                .step_by((p0.len() / 6).max(1))
                .take(6)
                .collect();
            let point: Vec<f32> = idx.iter().map(|&i| p0.data()[i]).collect();
            let analytic: Vec<f32> = idx.iter().map(|&i| g.data()[i]).collect();
            let err = finite_diff_check(
                |x| {
                    let mut n = net.clone();
                    let t = n.params.get_mut(name).unwrap();
                    for (&i, &v) in idx.iter().zip(x) {
                        t.data_mut()[i] = v;
                    }
                    n.loss_and_grads(&img, 2).unwrap().0
                },
                &point,
                &analytic,
                3e-3,
            );
            // f32 activations put a noise floor of about 1e-4 on the differences
            assert!(err < 6e-2, "{name}: {err}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = BaselineCnn::new(6);
        let back = BaselineCnn::from_checkpoint(&net.to_checkpoint()).unwrap();
        assert_eq!(back, net);
    }
}
