//! Reduced-resolution simulation (Wald degradation), PAN synthesis and BDSD
//! pseudo-references.

mod bdsd;
mod degrade;

pub use bdsd::{bdsd_coefficients, bdsd_fuse, BDSD_RIDGE};
pub use degrade::{degrade_pan, exp_upsample, mtf_degrade, synth_pan, upsample_bicubic, SensorModel};

use crate::error::Result;
use crate::rasters::{Raster, Scene};

/// Co-registered LRMS / PAN / pseudo-HRMS group for one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneTriplet {
    pub scene_id: u64,
    pub lrms: Raster,
    pub pan: Raster,
    pub pseudo_hrms: Option<Raster>,
}

pub fn make_triplet(scene: &Scene, model: &SensorModel, with_pseudo: bool) -> Result<SceneTriplet> {
    let lrms = mtf_degrade(&scene.hr_ms, model)?;
    let pan = synth_pan(&scene.hr_ms, model)?;
    let pseudo_hrms = if with_pseudo {
        Some(bdsd_fuse(&lrms, &pan, model)?)
    } else {
        None
    };
    Ok(SceneTriplet {
        scene_id: scene.id,
        lrms,
        pan,
        pseudo_hrms,
    })
}

/// Degrades a triplet's inputs once more so that its LRMS becomes the
/// ground truth. Returns `(lrms at 1/ratio², pan at 1/ratio)`.
pub fn reduce_inputs(triplet: &SceneTriplet, model: &SensorModel) -> Result<(Raster, Raster)> {
    Ok((mtf_degrade(&triplet.lrms, model)?, degrade_pan(&triplet.pan, model)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rasters::synth_scene;

    #[test]
    fn triplet_shapes_and_flag() {
        let scene = synth_scene(0, 64, 4).unwrap();
        let model = SensorModel::new(4);
        let t = make_triplet(&scene, &model, false).unwrap();
        assert_eq!(t.lrms.shape(), (16, 16, 4));
        assert_eq!(t.pan.shape(), (64, 64, 1));
        assert!(t.pseudo_hrms.is_none());
        let t2 = make_triplet(&scene, &model, true).unwrap();
        assert_eq!(t2.pseudo_hrms.as_ref().unwrap().shape(), (64, 64, 4));
        assert_eq!(t.lrms, t2.lrms);
        assert_eq!(t2, make_triplet(&scene, &model, true).unwrap());
    }

    #[test]
    fn reduced_inputs_shrink_again() {
        let scene = synth_scene(2, 64, 8).unwrap();
        let model = SensorModel::new(8);
        let t = make_triplet(&scene, &model, false).unwrap();
        let (l, p) = reduce_inputs(&t, &model).unwrap();
        assert_eq!(l.shape(), (4, 4, 8));
        assert_eq!(p.shape(), (16, 16, 1));
    }
}
