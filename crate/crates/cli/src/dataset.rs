//! On-disk simulated datasets: one directory per scene plus a manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use panlab::protocol::{make_triplet, SceneTriplet};
use panlab::rasters::{read_raster, synth_scene, write_raster};
use panlab::Error;

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "scene_id,seed,dir";

pub fn scene_dir(i: usize) -> String {
    format!("scene_{i:04}")
}

fn manifest_error(msg: &str) -> Error {
    Error::Format {
        offset: 0,
        msg: format!("manifest: {msg}"),
    }
}

/// Simulates `cfg.scenes` scenes into `out`.
pub fn write_dataset(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let model = cfg.sensor_model();
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    for i in 0..cfg.scenes {
        let seed = cfg.scene_seed(i);
        let scene = synth_scene(seed, cfg.size, cfg.bands)?;
        let t = make_triplet(&scene, &model, true)?;
        let dir = out.join(scene_dir(i));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write_raster(&scene.hr_ms, dir.join("hr_ms.panr"))?;
        write_raster(&t.lrms, dir.join("lrms.panr"))?;
        write_raster(&t.pan, dir.join("pan.panr"))?;
        write_raster(t.pseudo_hrms.as_ref().expect("requested"), dir.join("pseudo_hrms.panr"))?;
        manifest.push_str(&format!("{i},{seed},{}\n", scene_dir(i)));
    }
    fs::write(out.join(MANIFEST), manifest).with_context(|| format!("writing manifest in {}", out.display()))?;
    Ok(())
}

/// Reads every triplet listed in the manifest, in manifest order.
pub fn read_dataset(dir: &Path) -> anyhow::Result<Vec<SceneTriplet>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(manifest_error("header mismatch").into());
    }
    let mut out = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(manifest_error(&format!("bad line '{line}'")).into());
        }
        let id: u64 = f[0]
            .parse()
            .map_err(|_| manifest_error(&format!("bad scene id in '{line}'")))?;
        let sd: PathBuf = dir.join(f[2]);
        let pseudo = sd.join("pseudo_hrms.panr");
        out.push(SceneTriplet {
            scene_id: id,
            lrms: read_raster(sd.join("lrms.panr"))?,
            pan: read_raster(sd.join("pan.panr"))?,
            pseudo_hrms: if pseudo.exists() { Some(read_raster(pseudo)?) } else { None },
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyBatch.into());
    }
    Ok(out)
}
