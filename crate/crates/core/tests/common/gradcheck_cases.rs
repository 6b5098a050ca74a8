//! Finite-difference checks for every tape primitive and every composite
//! loss, shared by the autodiff tests and the acceptance run.

use std::sync::Arc;

use panlab::encoder::{encode_image, EncoderConfig, EncoderGraph, EncoderParams, ImageKind};
use panlab::ndtensor::resample::bicubic_matrix;
use panlab::ndtensor::{
    cosine_sim, gaussian_blur, grad_check_many, info_nce, l2_normalize, mae, mse, resize_bicubic, ssim, CeItem, Tape,
    Tensor, Var,
};
use panlab::protocol::SensorModel;
use panlab::rasters::Raster;
use panlab::stage1::{loss_fusion, loss_inter, loss_intra, IntraMode};
use panlab::stage2::{
    loss_directional, loss_pseudo, loss_qnr, loss_semantic, loss_spat, loss_spec, qnr_reference, SemanticAnchors,
};
use panlab::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-3;
/// Smaller step for cases that run through ReLU networks, so probes stay
/// on one side of every kink.
pub const KINK_EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values in ±[0.1, 1], away from the kinks of relu and abs.
fn signed(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Reduces any output to a scalar through fixed pseudo-random weights so
/// every output coordinate reaches the check.
fn contract(tape: &mut Tape<f64>, v: Var) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    let mut k = 0u64;
    let w = Tensor::from_fn(&shape, |_| {
        k += 1;
        ((k * 7919 % 101) as f64 / 101.0) - 0.4
    });
    let w = tape.constant(w);
    let p = tape.mul(v, w)?;
    Ok(tape.sum(p))
}

type Case = (&'static str, Result<f64>);

fn check(name: &'static str, inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) -> Case {
    check_with(name, EPS, inputs, f)
}

fn check_with(
    name: &'static str,
    eps: f64,
    inputs: Vec<Tensor<f64>>,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Case {
    (name, grad_check_many(f, &inputs, eps, Some(64)))
}

pub fn primitive_cases() -> Vec<Case> {
    let r = &mut ChaCha8Rng::seed_from_u64(2024);
    let ry = Arc::new(bicubic_matrix(5, 9).unwrap());
    let rx = Arc::new(bicubic_matrix(6, 3).unwrap());
    vec![
        check("add", vec![signed(r, &[3, 4]), signed(r, &[3, 4])], |t, v| {
            let y = t.add(v[0], v[1])?;
            contract(t, y)
        }),
        check("sub", vec![signed(r, &[3, 4]), signed(r, &[3, 4])], |t, v| {
            let y = t.sub(v[0], v[1])?;
            contract(t, y)
        }),
        check("mul", vec![signed(r, &[3, 4]), signed(r, &[3, 4])], |t, v| {
            let y = t.mul(v[0], v[1])?;
            contract(t, y)
        }),
        check("div", vec![signed(r, &[3, 4]), signed(r, &[3, 4])], |t, v| {
            let y = t.div(v[0], v[1])?;
            contract(t, y)
        }),
        check("affine", vec![signed(r, &[5])], |t, v| {
            let y = t.affine(v[0], -1.7, 0.3);
            contract(t, y)
        }),
        check("neg", vec![signed(r, &[5])], |t, v| {
            let y = t.neg(v[0]);
            contract(t, y)
        }),
        check("scale_by", vec![signed(r, &[2, 3]), signed(r, &[1])], |t, v| {
            let y = t.scale_by(v[0], v[1])?;
            contract(t, y)
        }),
        check("relu", vec![signed(r, &[12])], |t, v| {
            let y = t.relu(v[0]);
            contract(t, y)
        }),
        check("abs", vec![signed(r, &[12])], |t, v| {
            let y = t.abs(v[0]);
            contract(t, y)
        }),
        check("sqrt", vec![uniform(r, &[6], 0.2, 2.0)], |t, v| {
            let y = t.sqrt(v[0]);
            contract(t, y)
        }),
        check("exp", vec![signed(r, &[6])], |t, v| {
            let y = t.exp(v[0]);
            contract(t, y)
        }),
        check("ln", vec![uniform(r, &[6], 0.2, 2.0)], |t, v| {
            let y = t.ln(v[0]);
            contract(t, y)
        }),
        check("square", vec![signed(r, &[6])], |t, v| {
            let y = t.square(v[0]);
            contract(t, y)
        }),
        check("sum", vec![signed(r, &[2, 3, 2])], |t, v| Ok(t.sum(v[0]))),
        check("mean", vec![signed(r, &[2, 3, 2])], |t, v| Ok(t.mean(v[0]))),
        check("matmul", vec![signed(r, &[3, 4]), signed(r, &[4, 2])], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            contract(t, y)
        }),
        check("matmul_t", vec![signed(r, &[4, 3]), signed(r, &[2, 4])], |t, v| {
            let y = t.matmul_t(v[0], v[1], true, true)?;
            contract(t, y)
        }),
        check("add_bias", vec![signed(r, &[2, 3, 2, 2]), signed(r, &[3])], |t, v| {
            let y = t.add_bias(v[0], v[1])?;
            contract(t, y)
        }),
        check("conv2d", vec![signed(r, &[2, 2, 5, 5]), signed(r, &[3, 2, 3, 3])], |t, v| {
            let y = t.conv2d(v[0], v[1], 1, 1)?;
            contract(t, y)
        }),
        check("conv2d_strided", vec![signed(r, &[1, 2, 6, 6]), signed(r, &[2, 2, 3, 3])], |t, v| {
            let y = t.conv2d(v[0], v[1], 2, 0)?;
            contract(t, y)
        }),
        check("concat", vec![signed(r, &[2, 1, 3]), signed(r, &[2, 2, 3])], |t, v| {
            let y = t.concat(&[v[0], v[1], v[0]], 1)?;
            contract(t, y)
        }),
        check("narrow", vec![signed(r, &[2, 5, 3])], |t, v| {
            let y = t.narrow(v[0], 1, 1, 3)?;
            contract(t, y)
        }),
        check("reshape", vec![signed(r, &[2, 6])], |t, v| {
            let y = t.reshape(v[0], &[3, 4])?;
            contract(t, y)
        }),
        check("spatial_map", vec![signed(r, &[2, 1, 5, 6])], move |t, v| {
            let y = t.spatial_map(v[0], ry.clone(), rx.clone())?;
            contract(t, y)
        }),
        check("mean_spatial", vec![signed(r, &[2, 3, 4, 4])], |t, v| {
            let y = t.mean_spatial(v[0])?;
            contract(t, y)
        }),
        check("gather_rows", vec![signed(r, &[4, 3])], |t, v| {
            let y = t.gather_rows(v[0], &[2, 0, 2, 3])?;
            contract(t, y)
        }),
        check("normalize_rows", vec![signed(r, &[3, 5])], |t, v| {
            let y = t.normalize_rows(v[0])?;
            contract(t, y)
        }),
        check("cross_entropy", vec![signed(r, &[3, 4])], |t, v| {
            let items = vec![
                CeItem { row: 0, target: 1, allowed: vec![0, 1, 2, 3] },
                CeItem { row: 1, target: 3, allowed: vec![1, 3] },
                CeItem { row: 2, target: 0, allowed: vec![0, 2, 3] },
            ];
            t.cross_entropy(v[0], items)
        }),
        check("resize_bicubic", vec![signed(r, &[1, 2, 4, 4])], |t, v| {
            let y = resize_bicubic(t, v[0], 2.0)?;
            contract(t, y)
        }),
        check("gaussian_blur", vec![signed(r, &[1, 2, 6, 6])], |t, v| {
            let y = gaussian_blur(t, v[0], 1.0, 5)?;
            contract(t, y)
        }),
        check("l2_normalize", vec![signed(r, &[6])], |t, v| {
            let y = l2_normalize(t, v[0])?;
            contract(t, y)
        }),
        check("cosine_sim", vec![signed(r, &[6]), signed(r, &[6])], |t, v| cosine_sim(t, v[0], v[1])),
        check("info_nce", vec![signed(r, &[4, 4])], |t, v| info_nce(t, v[0], 0.3)),
        check("ssim", vec![uniform(r, &[1, 2, 13, 12], 0.0, 1.0), uniform(r, &[1, 2, 13, 12], 0.0, 1.0)], |t, v| {
            ssim(t, v[0], v[1])
        }),
        check("mse", vec![signed(r, &[2, 3]), signed(r, &[2, 3])], |t, v| mse(t, v[0], v[1])),
        check("mae", vec![signed(r, &[2, 3]), signed(r, &[2, 3])], |t, v| mae(t, v[0], v[1])),
    ]
}

fn raster(rng: &mut ChaCha8Rng, size: usize, bands: usize) -> Raster {
    Raster::from_fn(size, size, bands, |_, _, _| rng.random_range(0.05..0.95)).unwrap()
}

pub fn loss_cases() -> Vec<Case> {
    let r = &mut ChaCha8Rng::seed_from_u64(77);
    let n = 3;
    let emb = |r: &mut ChaCha8Rng, rows: usize| signed(r, &[rows, 8]);
    let inv_tau = Tensor::new(&[1], vec![4.0]).unwrap();

    let model = SensorModel::new(2);
    let lrms = raster(r, 12, 2);
    let pan = raster(r, 48, 1);
    let qref = vec![qnr_reference(&lrms, &pan, &model, 32).unwrap()];
    let x_lr: Tensor<f64> = Raster::stack(&[&lrms]).unwrap();
    let x_pan: Tensor<f64> = Raster::stack(&[&pan]).unwrap();
    let out48 = uniform(r, &[1, 2, 48, 48], 0.05, 0.95);

    let enc = EncoderParams::init(EncoderConfig::new(2), 5).unwrap();
    let anchors = SemanticAnchors::from_encoder(&enc).unwrap();
    let src = raster(r, 16, 2);
    let src_pan = raster(r, 16, 1);
    let f_ms = encode_image(&src, &enc, ImageKind::Ms).unwrap();
    let f_pan = encode_image(&src_pan, &enc, ImageKind::Pan).unwrap();

    vec![
        check("L_inter", vec![emb(r, 3 * n), emb(r, 3), inv_tau.clone()], |t, v| {
            let img = t.normalize_rows(v[0])?;
            let txt = t.normalize_rows(v[1])?;
            loss_inter(t, img, txt, v[2])
        }),
        check("L_intra", vec![emb(r, 3 * n), inv_tau.clone()], |t, v| {
            let img = t.normalize_rows(v[0])?;
            loss_intra(t, img, v[1], IntraMode::CrossScene)
        }),
        check("L_intra_all_rows", vec![emb(r, 3 * n), inv_tau.clone()], |t, v| {
            let img = t.normalize_rows(v[0])?;
            loss_intra(t, img, v[1], IntraMode::AllRows)
        }),
        check("L_fusion", vec![emb(r, 1), emb(r, 1), emb(r, n), emb(r, n)], |t, v| {
            loss_fusion(t, v[0], v[1], v[2], v[3])
        }),
        check("L_spec", vec![out48.clone(), x_lr.clone()], |t, v| loss_spec(t, v[0], v[1])),
        check("L_spat", vec![out48.clone(), x_pan.clone(), uniform(r, &[1, 2, 1, 1], 0.3, 0.7)], |t, v| {
            loss_spat(t, v[0], v[1], v[2])
        }),
        check("L_QNR", vec![out48.clone(), x_pan.clone()], |t, v| loss_qnr(t, v[0], v[1], &qref, 32)),
        check("L_pseudo", vec![out48.clone(), uniform(r, &[1, 2, 48, 48], 0.05, 0.95)], |t, v| {
            loss_pseudo(t, v[0], v[1])
        }),
        check("L_directional", vec![emb(r, n), emb(r, n), emb(r, 1), emb(r, 1)], |t, v| {
            loss_directional(t, v[0], v[1], v[2], v[3])
        }),
        check_with("L_d", KINK_EPS, vec![uniform(r, &[2, 2, 16, 16], 0.05, 0.95)], move |t, v| {
            let g = EncoderGraph::new(&enc, t, false);
            Ok(loss_semantic(t, &g, v[0], &[&f_ms, &f_ms], &[&f_pan, &f_pan], &anchors)?.loss)
        }),
    ]
}
