//! CSV and manifest emission. Reruns with identical config and seed
//! produce byte-identical files: no timestamps, deterministic float
//! formatting, stable row order.

use oralab_core::{DensityGrid, RemovalMeasure, RemovalPayload};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub struct RunDir {
    pub path: PathBuf,
    pub run_id: String,
    files: Vec<String>,
}

impl RunDir {
    pub fn create(out_dir: &Path, config_bytes: &[u8], seed: u64) -> std::io::Result<RunDir> {
        let mut hasher = Sha256::new();
        hasher.update(config_bytes);
        hasher.update(seed.to_le_bytes());
        let digest = hasher.finalize();
        let run_id: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
        fs::create_dir_all(out_dir)?;
        Ok(RunDir {
            path: out_dir.to_path_buf(),
            run_id,
            files: Vec::new(),
        })
    }

    pub fn writer(&mut self, name: &str) -> std::io::Result<BufWriter<fs::File>> {
        if let Some(parent) = self.path.join(name).parent() {
            fs::create_dir_all(parent)?;
        }
        self.files.push(name.to_string());
        let file = fs::File::create(self.path.join(name))?;
        Ok(BufWriter::new(file))
    }

    pub fn write_manifest(
        &mut self,
        config_json: &serde_json::Value,
        seed: u64,
        warnings: &[String],
    ) -> std::io::Result<()> {
        self.files.sort();
        self.files.dedup();
        let manifest = serde_json::json!({
            "run_id": self.run_id,
            "seed": seed,
            "version": env!("CARGO_PKG_VERSION"),
            "files": self.files,
            "warnings": warnings,
            "config": config_json,
        });
        let mut w = BufWriter::new(fs::File::create(self.path.join("manifest.json"))?);
        let text = serde_json::to_string_pretty(&manifest)?;
        w.write_all(text.as_bytes())?;
        w.write_all(b"\n")
    }
}

/// One `density_t{time}.csv` file holding every solver cell's profile at
/// that time: `run_id, x, lower, upper, mid`.
pub fn write_density_csv(
    dir: &mut RunDir,
    time: f64,
    cells: &[(String, &DensityGrid, &DensityGrid)],
) -> std::io::Result<()> {
    let mut w = dir.writer(&format!("density_t{time}.csv"))?;
    writeln!(w, "run_id,x,lower,upper,mid")?;
    for (key, lower, upper) in cells {
        let g = lower.grid();
        for i in 0..g.n_cells() {
            let l = lower.values()[i];
            let u = upper.values()[i];
            writeln!(
                w,
                "{key},{},{},{},{}",
                g.cell_center(i),
                l,
                u,
                0.5 * (l + u)
            )?;
        }
    }
    Ok(())
}

pub fn write_gap_rows<W: Write>(
    w: &mut W,
    cell_key: &str,
    times: &[f64],
    bounds: &[f64],
    measured: &[f64],
) -> std::io::Result<()> {
    for ((t, b), m) in times.iter().zip(bounds.iter()).zip(measured.iter()) {
        writeln!(w, "{cell_key},{t},{b},{m}")?;
    }
    Ok(())
}

/// Removal table rows: `t, lo, hi, mass` per entry, atoms as zero-width
/// slabs.
pub fn write_removal_rows<W: Write>(
    w: &mut W,
    cell_key: &str,
    removal: &RemovalMeasure,
) -> std::io::Result<()> {
    let grid = removal.grid();
    for (idx, e) in removal.entries().iter().enumerate() {
        let mass = removal.entry_total(idx);
        let (lo, hi) = match &e.payload {
            RemovalPayload::Atoms(a) => a.support_bounds().unwrap_or((f64::NAN, f64::NAN)),
            RemovalPayload::GridSlab { start, values } => match grid {
                Some(g) => (g.breakpoint(*start), g.breakpoint(start + values.len())),
                None => (f64::NAN, f64::NAN),
            },
            RemovalPayload::Summary { lo, hi, .. } => (*lo, *hi),
        };
        writeln!(w, "{cell_key},{},{lo},{hi},{mass}", e.time)?;
    }
    Ok(())
}
