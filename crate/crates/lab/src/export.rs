//! Plain-text and image exports.

use bplab_core::metrics::EquivarianceMap;
use bplab_core::network::EpochLog;
use bplab_core::Tensor;
use serde::{Deserialize, Serialize};

fn csv_bytes(f: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    f(&mut w).expect("writing csv to memory");
    w.into_inner().expect("flushing csv to memory")
}

/// `H` rows of `W` comma-separated values, no header. Values use Rust's
/// shortest round-trip formatting.
pub fn grid_csv(grid: &Tensor) -> Vec<u8> {
    let (_, h, w) = grid.spatial();
    csv_bytes(|out| {
        for r in 0..h {
            out.write_record(
                grid.data()[r * w..(r + 1) * w]
                    .iter()
                    .map(|v| v.to_string()),
            )?;
        }
        Ok(())
    })
}

pub fn training_log_csv(log: &[EpochLog]) -> Vec<u8> {
    csv_bytes(|out| {
        out.write_record(["epoch", "loss", "acc"])?;
        for e in log {
            out.write_record([
                e.epoch.to_string(),
                e.loss.to_string(),
                e.accuracy.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// How grey levels of a PGM map back to values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgmSidecar {
    pub width: usize,
    pub height: usize,
    /// Value drawn as 0.
    pub min: f64,
    /// Value drawn as 255.
    pub max: f64,
    /// `level = round(255 * (v - min) / (max - min))`; all zeros when
    /// `max == min`.
    pub scaling: String,
}

/// 8-bit binary PGM (P5) of an `[H, W]` grid, min-max scaled.
pub fn grid_pgm(grid: &Tensor) -> (Vec<u8>, PgmSidecar) {
    let (_, h, w) = grid.spatial();
    let (min, max) = (grid.min(), grid.max());
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(grid.data().iter().map(|&v| {
        if max > min {
            (255.0 * (v - min) / (max - min)).round() as u8
        } else {
            0
        }
    }));
    let sidecar = PgmSidecar {
        width: w,
        height: h,
        min,
        max,
        scaling: "level = round(255 * (v - min) / (max - min)); 0 when max == min".into(),
    };
    (bytes, sidecar)
}

/// Summary written next to an exported heatmap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSummary {
    pub layer: usize,
    pub layer_name: String,
    pub stride: usize,
    pub period: usize,
    pub tol: f64,
    pub pgm: PgmSidecar,
}

pub fn heatmap_summary(map: &EquivarianceMap, pgm: PgmSidecar) -> HeatmapSummary {
    HeatmapSummary {
        layer: map.layer,
        layer_name: map.layer_name.clone(),
        stride: map.stride,
        period: map.period,
        tol: map.tol,
        pgm,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_scaling() {
        let g = Tensor::new(vec![2, 3], vec![0.0, 0.5, 1.0, 0.25, 0.75, 1.0]).unwrap();
        let (bytes, side) = grid_pgm(&g);
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 128, 255, 64, 191, 255]);
        assert_eq!((side.min, side.max), (0.0, 1.0));
        let (flat, _) = grid_pgm(&Tensor::full(vec![1, 2], 3.0));
        assert_eq!(&flat[flat.len() - 2..], &[0, 0]);
    }

    #[test]
    fn csv_rows() {
        let g = Tensor::new(vec![2, 2], vec![0.0, 0.5, 1.0, 2.0]).unwrap();
        assert_eq!(String::from_utf8(grid_csv(&g)).unwrap(), "0,0.5\n1,2\n");
        let log = [EpochLog {
            epoch: 1,
            loss: 0.5,
            accuracy: 0.75,
        }];
        assert_eq!(
            String::from_utf8(training_log_csv(&log)).unwrap(),
            "epoch,loss,acc\n1,0.5,0.75\n"
        );
    }
}
