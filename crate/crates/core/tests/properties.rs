use outadapt::eval::{iou_report, ConfusionMatrix};
use outadapt::losses::{adv_loss, disc_loss, ls_adv_loss, ls_disc_loss, seg_loss, DomainLabel};
use outadapt::networks::{ParamKind, ParamSet, SegNet, SegNetSpec};
use outadapt::optim::{PolySchedule, SgdState};
use outadapt::{Tape, Tensor};
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

fn nchw() -> impl Strategy<Value = [usize; 4]> {
    (1usize..3, 2usize..5, 1usize..5, 1usize..5).prop_map(|(n, c, h, w)| [n, c, h, w])
}

fn tensor_in(range: f32) -> impl Strategy<Value = Tensor> {
    nchw().prop_flat_map(move |dims| {
        let len: usize = dims.iter().product();
        proptest::collection::vec(-range..range, len)
            .prop_map(move |v| Tensor::from_vec(dims, v).unwrap().with_grad())
    })
}

fn sigma_map() -> impl Strategy<Value = Tensor> {
    (1usize..4, 1usize..4).prop_flat_map(|(h, w)| {
        proptest::collection::vec(0.0f32..=1.0, h * w)
            .prop_map(move |v| Tensor::from_vec([1, 1, h, w], v).unwrap().with_grad())
    })
}

/// Forward value and input gradient of `sum(op(x))`.
fn value_and_grad(x: &Tensor, op: &dyn Fn(&mut Tape, outadapt::Var) -> outadapt::Result<outadapt::Var>) -> (Vec<f32>, Vec<f32>) {
    let mut t = Tape::new();
    let v = t.leaf(x);
    let y = op(&mut t, v).unwrap();
    let out = t.value(y).to_vec();
    let s = t.sum(y).unwrap();
    let g = t.backward(s).unwrap();
    (out, g.get(v).unwrap().to_vec())
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn softmax_sums_to_one(x in tensor_in(1e3)) {
        let mut t = Tape::new();
        let v = t.leaf(&x);
        let p = t.softmax_channels(v).unwrap();
        let [n, c, h, w]: [usize; 4] = x.dims().try_into().unwrap();
        let vals = t.value(p);
        for b in 0..n {
            for i in 0..h * w {
                let s: f32 = (0..c).map(|k| vals[(b * c + k) * h * w + i]).sum();
                prop_assert!((s - 1.0).abs() <= 1e-5, "sum {s}");
            }
        }
    }

    #[test]
    fn ops_stay_finite_on_large_inputs(x in tensor_in(1e6)) {
        let c = x.dims()[1];
        let weight = Tensor::full([2, c, 3, 3], 0.5).unwrap();
        let bias = Tensor::full([2], -1.0).unwrap();
        let mut t = Tape::new();
        let v = t.leaf(&x);
        let (wv, bv) = (t.leaf(&weight), t.leaf(&bias));
        let outs = [
            t.conv2d(v, wv, bv, 1, 1, 1).unwrap(),
            t.leaky_relu(v, 0.2).unwrap(),
            t.sigmoid(v).unwrap(),
            t.softmax_channels(v).unwrap(),
            t.upsample_bilinear(v, 7, 5).unwrap(),
        ];
        for y in outs {
            prop_assert!(t.value(y).iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn forward_and_backward_are_bitwise_repeatable(x in tensor_in(3.0)) {
        let op = |t: &mut Tape, v| {
            let s = t.softmax_channels(v)?;
            let u = t.upsample_bilinear(s, 5, 6)?;
            t.leaky_relu(u, 0.2)
        };
        let a = value_and_grad(&x, &op);
        let b = value_and_grad(&x, &op);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn seg_loss_gradient_is_softmax_minus_one_hot(
        logits in proptest::collection::vec(-4.0f32..4.0, 3 * 4),
        labels in proptest::collection::vec(0u8..3, 4),
    ) {
        let x = Tensor::from_vec([1, 3, 2, 2], logits).unwrap().with_grad();
        let mut t = Tape::new();
        let v = t.leaf(&x);
        let p = t.softmax_channels(v).unwrap();
        let l = seg_loss(&mut t, p, &labels).unwrap();
        let probs = t.value(p).to_vec();
        let g = t.backward(l).unwrap();
        let g = g.get(v).unwrap();
        for (i, &y) in labels.iter().enumerate() {
            for k in 0..3 {
                let expected = probs[k * 4 + i] - if usize::from(y) == k { 1.0 } else { 0.0 };
                prop_assert!((g[k * 4 + i] - expected).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn adversarial_loss_is_source_discrimination(s in sigma_map()) {
        let mut t = Tape::new();
        let v = t.leaf(&s);
        let a = adv_loss(&mut t, v).unwrap();
        let d = disc_loss(&mut t, v, DomainLabel::Source).unwrap();
        prop_assert_eq!(t.scalar(a), t.scalar(d));
    }

    #[test]
    fn losses_are_finite_and_nonnegative(s in sigma_map()) {
        let mut t = Tape::new();
        let v = t.leaf(&s);
        let mut losses = vec![adv_loss(&mut t, v).unwrap(), ls_adv_loss(&mut t, v).unwrap()];
        for z in [DomainLabel::Source, DomainLabel::Target] {
            losses.push(disc_loss(&mut t, v, z).unwrap());
            losses.push(ls_disc_loss(&mut t, v, z).unwrap());
        }
        for l in losses {
            let x = t.scalar(l);
            prop_assert!(x.is_finite() && x >= 0.0, "{x}");
        }
    }

    #[test]
    fn adversarial_losses_are_minimized_at_one(s in sigma_map()) {
        let ones = Tensor::full(s.dims().to_vec(), 1.0).unwrap();
        let mut t = Tape::new();
        let (v, o) = (t.leaf(&s), t.leaf(&ones));
        for f in [adv_loss, ls_adv_loss] {
            let at_s = f(&mut t, v).unwrap();
            let at_one = f(&mut t, o).unwrap();
            prop_assert!(t.scalar(at_one) <= t.scalar(at_s));
        }
    }

    #[test]
    fn poly_schedule_never_increases(base in 1e-6f64..1.0, total in 1u64..5000) {
        let s = PolySchedule::new(base, total);
        let mut prev = f64::INFINITY;
        for t in (0..=total).step_by((total / 50).max(1) as usize) {
            let lr = s.lr(t).unwrap();
            prop_assert!(lr <= prev && lr >= 0.0);
            prev = lr;
        }
        prop_assert_eq!(s.lr(total).unwrap(), 0.0);
    }

    #[test]
    fn sgd_shrinks_a_quadratic(start in proptest::collection::vec(-5.0f32..5.0, 1..32)) {
        let mut set = ParamSet::new();
        set.push("p", ParamKind::Weight, Tensor::from_vec([start.len()], start.clone()).unwrap());
        let f = |p: &[f32]| p.iter().map(|x| f64::from(x * x)).sum::<f64>() / 2.0;
        let f0 = f(&start);
        let mut sgd = SgdState::new(&set);
        for _ in 0..50 {
            set.zero_grads();
            let p = set.tensor(0).data().to_vec();
            set.tensor_mut(0).accumulate_grad(&p).unwrap();
            sgd.step(&mut set, 0.05).unwrap();
        }
        prop_assert!(f(set.tensor(0).data()) <= 0.1 * f0 + 1e-12);
    }
}

proptest! {
    #![proptest_config(config(8))]

    #[test]
    fn segnet_outputs_match_input_size(h in 1usize..5, w in 1usize..5, seed in 0u64..100) {
        let (h, w) = (8 * h, 8 * w);
        let net = SegNet::new(SegNetSpec::new(3).with_widths([4, 4, 4, 4, 4]), seed).unwrap();
        let image = Tensor::full([1, 3, h, w], 0.5).unwrap();
        let mut t = Tape::new();
        let bound = net.params().bind(&mut t, false);
        let x = t.leaf(&image);
        let out = net.forward(&mut t, &bound, x).unwrap();
        prop_assert_eq!(t.shape(out.p1).dims(), &[1, 3, h, w]);
        prop_assert_eq!(t.shape(out.p2).dims(), &[1, 3, h, w]);
    }
}

/// Per-class IoU by explicit pixel-set intersection and union.
fn set_counting_iou(pred: &[u8], truth: &[u8], classes: u8) -> Vec<Option<f64>> {
    (0..classes)
        .map(|c| {
            let in_pred: Vec<bool> = pred.iter().map(|&p| p == c).collect();
            let in_truth: Vec<bool> = truth.iter().map(|&t| t == c).collect();
            let inter = in_pred.iter().zip(&in_truth).filter(|(a, b)| **a && **b).count();
            let union = in_pred.iter().zip(&in_truth).filter(|(a, b)| **a || **b).count();
            (union > 0).then(|| inter as f64 / union as f64)
        })
        .collect()
}

fn instance() -> impl Strategy<Value = (u8, Vec<u8>, Vec<u8>)> {
    (2u8..=4).prop_flat_map(|c| {
        (
            Just(c),
            proptest::collection::vec(0..c, 64),
            proptest::collection::vec(0..c, 64),
        )
    })
}

proptest! {
    #![proptest_config(config(200))]

    #[test]
    fn iou_matches_set_counting((c, pred, truth) in instance()) {
        let mut cm = ConfusionMatrix::new(usize::from(c));
        cm.add_labels(&pred, &truth).unwrap();
        let report = iou_report(&cm, 1);
        let oracle = set_counting_iou(&pred, &truth, c);
        prop_assert_eq!(&report.per_class, &oracle);
        let defined: Vec<f64> = oracle.iter().flatten().copied().collect();
        let min = defined.iter().copied().fold(f64::INFINITY, f64::min);
        let max = defined.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let miou = report.miou.unwrap();
        prop_assert!(0.0 <= min && min <= miou + 1e-12 && miou <= max + 1e-12);
    }

    #[test]
    fn iou_ignores_image_order(
        images in proptest::collection::vec((proptest::collection::vec(0u8..3, 16), proptest::collection::vec(0u8..3, 16)), 1..6),
        rotate in 0usize..6,
    ) {
        let report = |order: &[(Vec<u8>, Vec<u8>)]| {
            let mut cm = ConfusionMatrix::new(3);
            for (p, t) in order {
                cm.add_labels(p, t).unwrap();
            }
            iou_report(&cm, order.len())
        };
        let mut shuffled = images.clone();
        shuffled.rotate_left(rotate % images.len());
        shuffled.reverse();
        prop_assert_eq!(report(&images), report(&shuffled));
    }
}
