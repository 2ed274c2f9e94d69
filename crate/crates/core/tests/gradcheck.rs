//! Analytic gradients against central finite differences.

use cardioseg_core::loss::{
    cross_entropy_seg, cross_entropy_seg_with_grad, da_discriminator_loss,
    da_discriminator_loss_with_grad, da_segmentor_loss, da_segmentor_loss_with_grad,
    discriminator_loss, discriminator_loss_with_grad, segmentor_loss, segmentor_loss_with_grad,
    LossConfig,
};
use cardioseg_core::model::{Discriminator, DiscriminatorConfig, Segmentor, SegmentorConfig};
use cardioseg_core::nn::{softmax_channels, ParamSet, Tensor4};
use cardioseg_core::train::{discriminator_objective, segmentor_objective, LabeledBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REL_TOL: f64 = 1e-4;
/// Absorbs finite-difference round-off on O(1) objectives.
const ABS_FLOOR: f64 = 1e-8;
const H: f64 = 1e-6;

fn assert_close(analytic: f64, numeric: f64, what: &str) {
    let scale = analytic.abs().max(numeric.abs());
    assert!(
        (analytic - numeric).abs() <= REL_TOL * scale + ABS_FLOOR,
        "{what}: analytic {analytic:e} vs numeric {numeric:e}"
    );
}

fn central(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + H) - f(x - H)) / (2.0 * H)
}

fn random_probs(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, c: usize) -> Tensor4 {
    let logits: Vec<f64> = (0..n * h * w * c).map(|_| rng.random_range(-2.0..2.0)).collect();
    softmax_channels(&Tensor4::from_vec(n, h, w, c, logits).unwrap())
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, c: usize) -> Tensor4 {
    let mut t = Tensor4::zeros(n, h, w, c);
    for px in t.data.chunks_exact_mut(c) {
        px[rng.random_range(0..c)] = 1.0;
    }
    t
}

fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.05..0.95)).collect()
}

fn lambda_cfg() -> LossConfig {
    // A large weight keeps the adversarial terms numerically visible.
    LossConfig {
        lambda_adv: 0.7,
        ..LossConfig::default()
    }
}

fn check_vec(analytic: &[f64], values: &[f64], mut f: impl FnMut(&[f64]) -> f64, what: &str) {
    for i in 0..values.len() {
        let mut v = values.to_vec();
        let num = central(
            |x| {
                v[i] = x;
                f(&v)
            },
            values[i],
        );
        assert_close(analytic[i], num, &format!("{what}[{i}]"));
    }
}

fn check_pred(analytic: &Tensor4, pred: &Tensor4, mut f: impl FnMut(&Tensor4) -> f64, what: &str) {
    check_vec(
        &analytic.data,
        &pred.data,
        |d| {
            let mut p = pred.clone();
            p.data.copy_from_slice(d);
            f(&p)
        },
        what,
    );
}

#[test]
fn loss_gradients_on_random_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = lambda_cfg();
    for case in 0..20 {
        let n = rng.random_range(1..=2);
        let (h, w) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let c = rng.random_range(2..=3);
        let n_t = rng.random_range(0..=2);
        let pred = random_probs(&mut rng, n, h, w, c);
        let labels = random_labels(&mut rng, n, h, w, c);
        let ds = random_scores(&mut rng, n);
        let dt = random_scores(&mut rng, n_t);
        let real = random_scores(&mut rng, n);
        let tag = |eq: &str| format!("case {case} {eq}");

        let (_, g) = cross_entropy_seg_with_grad(&pred, &labels, &cfg).unwrap();
        check_pred(&g, &pred, |p| cross_entropy_seg(p, &labels, &cfg).unwrap(), &tag("cross-entropy dpred"));

        let (_, g) = segmentor_loss_with_grad(&pred, &labels, &ds, &cfg).unwrap();
        let j = |p: &Tensor4, s: &[f64]| segmentor_loss(p, &labels, s, &cfg).unwrap().j_s_total;
        check_pred(&g.dpred, &pred, |p| j(p, &ds), &tag("segmentor dpred"));
        check_vec(&g.dscores_source, &ds, |s| j(&pred, s), &tag("segmentor dscores"));

        let (_, g) = discriminator_loss_with_grad(&real, &ds, &cfg).unwrap();
        let j = |r: &[f64], f: &[f64]| discriminator_loss(r, f, &cfg).unwrap().j_d_total;
        check_vec(&g.dreal, &real, |r| j(r, &ds), &tag("discriminator dreal"));
        check_vec(&g.dfake_source, &ds, |f| j(&real, f), &tag("discriminator dfake"));

        let (_, g) = da_segmentor_loss_with_grad(&pred, &labels, &ds, &dt, &cfg).unwrap();
        let j = |p: &Tensor4, s: &[f64], t: &[f64]| da_segmentor_loss(p, &labels, s, t, &cfg).unwrap().j_s_total;
        check_pred(&g.dpred, &pred, |p| j(p, &ds, &dt), &tag("da segmentor dpred"));
        check_vec(&g.dscores_source, &ds, |s| j(&pred, s, &dt), &tag("da segmentor dsource"));
        check_vec(&g.dscores_target, &dt, |t| j(&pred, &ds, t), &tag("da segmentor dtarget"));

        let (_, g) = da_discriminator_loss_with_grad(&real, &ds, &dt, &cfg).unwrap();
        let j = |r: &[f64], f: &[f64], t: &[f64]| da_discriminator_loss(r, f, t, &cfg).unwrap().j_d_total;
        check_vec(&g.dreal, &real, |r| j(r, &ds, &dt), &tag("da discriminator dreal"));
        check_vec(&g.dfake_source, &ds, |f| j(&real, f, &dt), &tag("da discriminator dsource"));
        check_vec(&g.dfake_target, &dt, |t| j(&real, &ds, t), &tag("da discriminator dtarget"));
    }
}

struct Nets {
    seg: Segmentor,
    disc: Discriminator,
    source: LabeledBatch,
    target: Tensor4,
}

fn tiny_nets(seed: u64) -> Nets {
    let num_classes = 3;
    let seg = Segmentor::init(
        SegmentorConfig {
            input_height: 16,
            input_width: 16,
            num_classes,
            stage_widths: vec![2, 2, 3, 3],
            stage_downsample: vec![2, 2, 2, 2],
            convs_per_stage: 2,
            skip_stages: vec![0, 2],
        },
        seed,
    )
    .unwrap();
    let disc = Discriminator::init(
        DiscriminatorConfig {
            input_channels: num_classes,
            stage_widths: vec![2, 3],
        },
        seed,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let image = |rng: &mut ChaCha8Rng, n| {
        let data = (0..n * 256).map(|_| rng.random_range(0.0..1.0)).collect();
        Tensor4::from_vec(n, 16, 16, 1, data).unwrap()
    };
    let source = LabeledBatch {
        images: image(&mut rng, 2),
        labels: random_labels(&mut rng, 2, 16, 16, num_classes),
    };
    let target = image(&mut rng, 2);
    Nets {
        seg,
        disc,
        source,
        target,
    }
}

fn check_params(
    params: &ParamSet,
    analytic: &[Vec<f64>],
    mut objective: impl FnMut(&ParamSet) -> f64,
    what: &str,
) {
    let mut checked = 0;
    for (pi, p) in params.params.iter().enumerate() {
        for i in 0..p.data.len() {
            let num = central(
                |x| {
                    let mut q = params.clone();
                    q.params[pi].data[i] = x;
                    objective(&q)
                },
                p.data[i],
            );
            assert_close(analytic[pi][i], num, &format!("{what} {}[{i}]", p.name));
            checked += 1;
        }
    }
    assert_eq!(checked, params.num_scalars());
}

#[test]
fn segmentor_parameter_gradients_for_every_objective() {
    let nets = tiny_nets(11);
    let cfg = lambda_cfg();
    let cases: [(&str, bool, bool); 3] = [
        ("cross-entropy", false, false),
        ("segmentor adversarial", true, false),
        ("domain-adaptive segmentor", true, true),
    ];
    for (what, adversarial, with_target) in cases {
        let disc = adversarial.then_some(&nets.disc);
        let target = with_target.then_some(&nets.target);
        let (_, grads) = segmentor_objective(&nets.seg, disc, &nets.source, target, &cfg).unwrap();
        check_params(
            &nets.seg.params,
            &grads,
            |q| {
                let mut s = nets.seg.clone();
                s.params = q.clone();
                segmentor_objective(&s, disc, &nets.source, target, &cfg).unwrap().0.j_s_total
            },
            what,
        );
    }
}

#[test]
fn discriminator_parameter_gradients_for_both_objectives() {
    let nets = tiny_nets(12);
    let cfg = lambda_cfg();
    for (what, target) in [("discriminator", None), ("domain-adaptive discriminator", Some(&nets.target))] {
        let (_, grads) = discriminator_objective(&nets.seg, &nets.disc, &nets.source, target, &cfg).unwrap();
        check_params(
            &nets.disc.params,
            &grads,
            |q| {
                let mut d = nets.disc.clone();
                d.params = q.clone();
                discriminator_objective(&nets.seg, &d, &nets.source, target, &cfg).unwrap().0.j_d_total
            },
            what,
        );
    }
}
