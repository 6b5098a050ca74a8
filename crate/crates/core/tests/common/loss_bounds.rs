//! One randomized trial of every loss term, checked against its range.

use std::sync::OnceLock;

use panlab::encoder::{encode_image, EncoderConfig, EncoderGraph, EncoderParams, ImageKind};
use panlab::ndtensor::{info_nce, Tape, Tensor};
use panlab::protocol::SensorModel;
use panlab::rasters::Raster;
use panlab::stage1::{loss_fusion, loss_inter, loss_intra, IntraMode};
use panlab::stage2::{
    loss_directional, loss_pseudo, loss_qnr, loss_semantic, loss_spat, loss_spec, qnr_reference, SemanticAnchors,
};
use panlab::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HR: usize = 48;
const BLOCK: usize = 32;

struct Fixture {
    encoder: EncoderParams,
    anchors: SemanticAnchors,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let encoder = EncoderParams::init(EncoderConfig::new(4), 3).unwrap();
        let anchors = SemanticAnchors::from_encoder(&encoder).unwrap();
        Fixture { encoder, anchors }
    })
}

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Tensor<f64> {
    Tensor::from_fn(&[rows, d], |_| rng.random_range(-1.0..1.0))
}

fn raster(rng: &mut ChaCha8Rng, size: usize, bands: usize) -> Raster {
    Raster::from_fn(size, size, bands, |_, _, _| rng.random_range(0.0..1.0)).unwrap()
}

/// Runs every loss on inputs drawn from `seed` and returns each term's
/// value. `Err` describes a term outside its range or a wrong error.
pub fn loss_trial(seed: u64) -> Result<Vec<(&'static str, f64)>, String> {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=5usize);
    let d = 8;
    let tau = rng.random_range(0.01..1.0f64);
    let mut out = Vec::new();
    let mut tape = Tape::<f64>::new();
    let t = &mut tape;

    let img = t.constant(unit_rows(rng, 3 * n, d));
    let img = t.normalize_rows(img).map_err(|e| e.to_string())?;
    let txt = t.constant(unit_rows(rng, 3, d));
    let txt = t.normalize_rows(txt).map_err(|e| e.to_string())?;
    let inv = t.constant(Tensor::new(&[1], vec![1.0 / tau]).unwrap());
    let v = loss_inter(t, img, txt, inv).map_err(|e| e.to_string())?;
    out.push(("L_inter", t.value(v).item(), 0.0, f64::INFINITY));
    for mode in [IntraMode::CrossScene, IntraMode::AllRows] {
        match loss_intra(t, img, inv, mode) {
            Ok(v) => out.push(("L_intra", t.value(v).item(), 0.0, f64::INFINITY)),
            Err(Error::InsufficientNegatives(_)) if n == 1 => {}
            Err(e) => return Err(format!("L_intra with n={n}: {e}")),
        }
    }
    let hrms = t.narrow(img, 0, 2 * n, n).map_err(|e| e.to_string())?;
    let fused_img = t.constant(unit_rows(rng, n, d));
    let fused_txt = t.constant(unit_rows(rng, 1, d));
    let wald = t.narrow(txt, 0, 2, 1).map_err(|e| e.to_string())?;
    let v = loss_fusion(t, fused_txt, wald, fused_img, hrms).map_err(|e| e.to_string())?;
    out.push(("L_fusion", t.value(v).item(), 0.0, f64::INFINITY));

    let sim = t.constant(Tensor::from_fn(&[n, n], |_| rng.random_range(-1.0..1.0)));
    let v = info_nce(t, sim, tau).map_err(|e| e.to_string())?;
    let nce = t.value(v).item();
    if n == 1 && nce != 0.0 {
        return Err(format!("info_nce with one pair is {nce}, expected 0"));
    }
    out.push(("info_nce", nce, 0.0, f64::INFINITY));

    let bands = 4;
    let model = SensorModel::new(bands);
    let lr = HR / model.ratio;
    let rows = rng.random_range(1..=2usize);
    let lrms: Vec<Raster> = (0..rows).map(|_| raster(rng, lr, bands)).collect();
    let pans: Vec<Raster> = (0..rows).map(|_| raster(rng, HR, 1)).collect();
    let outs: Vec<Raster> = (0..rows).map(|_| raster(rng, HR, bands)).collect();
    let refs: Vec<Raster> = (0..rows).map(|_| raster(rng, HR, bands)).collect();
    let stack = |rs: &[Raster]| -> Tensor<f64> { Raster::stack(&rs.iter().collect::<Vec<_>>()).unwrap() };
    let x_lr = t.constant(stack(&lrms));
    let x_pan = t.constant(stack(&pans));
    let x_out = t.constant(stack(&outs));
    let x_ref = t.constant(stack(&refs));
    let phi = t.constant(Tensor::full(&[1, bands, 1, 1], 1.0 / bands as f64));
    let qref: Vec<Vec<f64>> = (0..rows)
        .map(|i| qnr_reference(&lrms[i], &pans[i], &model, BLOCK))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    for (name, v) in [
        ("L_spec", loss_spec(t, x_out, x_lr)),
        ("L_spat", loss_spat(t, x_out, x_pan, phi)),
        ("L_QNR", loss_qnr(t, x_out, x_pan, &qref, BLOCK)),
        ("L_pseudo", loss_pseudo(t, x_out, x_ref)),
    ] {
        let v = v.map_err(|e| format!("{name}: {e}"))?;
        out.push((name, t.value(v).item(), 0.0, f64::INFINITY));
    }

    let di_ms = t.constant(unit_rows(rng, n, d));
    let di_pan = t.constant(unit_rows(rng, n, d));
    let dt_ms = t.constant(unit_rows(rng, 1, d));
    let dt_pan = t.constant(unit_rows(rng, 1, d));
    let v = loss_directional(t, di_ms, di_pan, dt_ms, dt_pan).map_err(|e| e.to_string())?;
    out.push(("L_directional", t.value(v).item(), 0.0, 2.0));

    let fx = fixture();
    let f_ms: Vec<Vec<f32>> = lrms
        .iter()
        .map(|r| encode_image(r, &fx.encoder, ImageKind::Ms))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let f_pan: Vec<Vec<f32>> = pans
        .iter()
        .map(|r| encode_image(r, &fx.encoder, ImageKind::Pan))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let g = EncoderGraph::new(&fx.encoder, t, false);
    let ms: Vec<&[f32]> = f_ms.iter().map(Vec::as_slice).collect();
    let pan: Vec<&[f32]> = f_pan.iter().map(Vec::as_slice).collect();
    let s = loss_semantic(t, &g, x_out, &ms, &pan, &fx.anchors).map_err(|e| e.to_string())?;
    out.push(("L_d", t.value(s.loss).item(), 0.0, 2.0));

    // cosines are rounded at the last bit
    let slack = 1e-12;
    for &(name, v, lo, hi) in &out {
        if !(v.is_finite() && v >= lo - slack && v <= hi + slack) {
            return Err(format!("{name} = {v} outside [{lo}, {hi}] (seed {seed}, n {n})"));
        }
    }
    Ok(out.into_iter().map(|(name, v, _, _)| (name, v)).collect())
}
