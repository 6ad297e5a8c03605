//! Scan grids, spectra and the shared spectrum CSV schema.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{mhz, to_mhz};

/// Column names of the spectrum CSV, in order.
pub const SPECTRUM_COLUMNS: [&str; 8] = [
    "delta_c_MHz",
    "delta_a_MHz",
    "p_in_pW",
    "p_out_fW",
    "stderr_fW",
    "n_photon",
    "p_excited",
    "model",
];

/// One point of a scan in the `(Δa, Δc)` plane, rad/us.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub delta_a: f64,
    pub delta_c: f64,
}

impl ScanPoint {
    pub fn new(delta_a: f64, delta_c: f64) -> Self {
        Self { delta_a, delta_c }
    }
}

/// Cavity detunings `lo, lo + step, ..., <= hi` (inclusive within round-off),
/// all in MHz.
pub fn detuning_axis_mhz(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!("bad scan axis lo={lo} hi={hi} step={step}")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| lo + k as f64 * step).collect())
}

/// Scan at fixed atom–cavity detuning `ω_a - ω_c` (MHz): `Δa = Δc - (ω_a - ω_c)`.
pub fn diagonal_scan(atom_cavity_mhz: f64, lo: f64, hi: f64, step: f64) -> Result<Vec<ScanPoint>> {
    Ok(detuning_axis_mhz(lo, hi, step)?
        .into_iter()
        .map(|dc| ScanPoint::new(mhz(dc - atom_cavity_mhz), mhz(dc)))
        .collect())
}

/// Scan of the cavity detuning at fixed atom detuning `Δa` (MHz).
pub fn vertical_scan(delta_a_mhz: f64, lo: f64, hi: f64, step: f64) -> Result<Vec<ScanPoint>> {
    Ok(detuning_axis_mhz(lo, hi, step)?
        .into_iter()
        .map(|dc| ScanPoint::new(mhz(delta_a_mhz), mhz(dc)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Quantum,
    SingleExcitation,
    MaxwellBloch,
    MonteCarlo,
}

impl Model {
    pub fn tag(self) -> &'static str {
        match self {
            Model::Quantum => "quantum",
            Model::SingleExcitation => "single-excitation",
            Model::MaxwellBloch => "maxwell-bloch",
            Model::MonteCarlo => "montecarlo",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "quantum" => Ok(Model::Quantum),
            "single-excitation" => Ok(Model::SingleExcitation),
            "maxwell-bloch" => Ok(Model::MaxwellBloch),
            "montecarlo" => Ok(Model::MonteCarlo),
            other => Err(Error::Schema(format!("unknown model tag '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumPoint {
    /// rad/us
    pub delta_c: f64,
    /// rad/us
    pub delta_a: f64,
    /// Transmitted power, fW.
    pub power_out: f64,
    /// Standard deviation, fW. `NaN` marks a missing value.
    pub stderr: f64,
    pub n_photon: f64,
    pub p_excited: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Input power, pW.
    pub p_in: f64,
    pub model: Model,
    pub points: Vec<SpectrumPoint>,
    /// Scan points that failed to evaluate.
    pub gaps: Vec<ScanPoint>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    #[serde(rename = "delta_c_MHz")]
    delta_c_mhz: f64,
    #[serde(rename = "delta_a_MHz")]
    delta_a_mhz: f64,
    #[serde(rename = "p_in_pW")]
    p_in_pw: f64,
    #[serde(rename = "p_out_fW")]
    p_out_fw: f64,
    #[serde(rename = "stderr_fW")]
    stderr_fw: f64,
    n_photon: f64,
    p_excited: f64,
    model: String,
}

impl Spectrum {
    pub fn new(p_in: f64, model: Model) -> Self {
        Self { p_in, model, points: Vec::new(), gaps: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn delta_c_mhz(&self) -> Vec<f64> {
        self.points.iter().map(|p| to_mhz(p.delta_c)).collect()
    }

    pub fn powers(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.power_out).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wr.write_record(SPECTRUM_COLUMNS)?;
        for p in &self.points {
            wr.serialize(CsvRow {
                delta_c_mhz: to_mhz(p.delta_c),
                delta_a_mhz: to_mhz(p.delta_a),
                p_in_pw: self.p_in,
                p_out_fw: p.power_out,
                stderr_fw: p.stderr,
                n_photon: p.n_photon,
                p_excited: p.p_excited,
                model: self.model.tag().to_string(),
            })?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads one spectrum. All rows must share the input power and model tag.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).has_headers(false).from_reader(r);
        let mut records = rd.records();
        let header = records
            .next()
            .ok_or_else(|| Error::Schema("empty spectrum file".into()))??;
        let got: Vec<&str> = header.iter().collect();
        for (i, want) in SPECTRUM_COLUMNS.iter().enumerate() {
            match got.get(i) {
                Some(name) if name == want => {}
                Some(name) => {
                    return Err(Error::Schema(format!(
                        "column {i}: expected '{want}', found '{name}'"
                    )))
                }
                None => return Err(Error::Schema(format!("missing column '{want}'"))),
            }
        }
        if got.len() > SPECTRUM_COLUMNS.len() {
            return Err(Error::Schema(format!("unexpected column '{}'", got[SPECTRUM_COLUMNS.len()])));
        }
        let headers = csv::StringRecord::from(SPECTRUM_COLUMNS.to_vec());
        let mut spectrum: Option<Spectrum> = None;
        for (line, rec) in records.enumerate() {
            let rec = rec?;
            let row: CsvRow = rec.deserialize(Some(&headers)).map_err(|e| {
                Error::Schema(format!("row {}: {e}", line + 2))
            })?;
            let model: Model = row.model.parse()?;
            let s = spectrum.get_or_insert_with(|| Spectrum::new(row.p_in_pw, model));
            if s.model != model || (s.p_in - row.p_in_pw).abs() > 1e-12 * (1.0 + s.p_in.abs()) {
                return Err(Error::Schema(format!(
                    "row {}: mixed p_in_pW/model within one spectrum",
                    line + 2
                )));
            }
            s.points.push(SpectrumPoint {
                delta_c: mhz(row.delta_c_mhz),
                delta_a: mhz(row.delta_a_mhz),
                power_out: row.p_out_fw,
                stderr: row.stderr_fw,
                n_photon: row.n_photon,
                p_excited: row.p_excited,
            });
        }
        spectrum.ok_or_else(|| Error::Schema("spectrum file has no data rows".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_includes_end_point() {
        let ax = detuning_axis_mhz(-25.0, 5.0, 0.25).unwrap();
        assert_eq!(ax.len(), 121);
        assert!((ax[120] - 5.0).abs() < 1e-12);
        assert!(detuning_axis_mhz(1.0, 0.0, 0.1).is_err());
        assert!(detuning_axis_mhz(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn diagonal_scan_keeps_atom_cavity_detuning() {
        let s = diagonal_scan(-10.5, -20.0, 10.0, 1.0).unwrap();
        for p in s {
            // ω_a - ω_c = Δc - Δa
            assert!((to_mhz(p.delta_c - p.delta_a) + 10.5).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_round_trip_and_schema_errors() {
        let mut s = Spectrum::new(1.5, Model::Quantum);
        s.points.push(SpectrumPoint {
            delta_c: mhz(-11.0),
            delta_a: mhz(-0.5),
            power_out: 5.8,
            stderr: f64::NAN,
            n_photon: 5.8e-3,
            p_excited: 1e-3,
        });
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "delta_c_MHz,delta_a_MHz,p_in_pW,p_out_fW,stderr_fW,n_photon,p_excited,model\n"
        ));
        let back = Spectrum::read_csv(&buf[..]).unwrap();
        assert_eq!(back.model, Model::Quantum);
        assert!((back.points[0].delta_c - s.points[0].delta_c).abs() < 1e-12);
        assert!(back.points[0].stderr.is_nan());

        let bad = text.replacen("p_out_fW", "p_out", 1);
        let err = Spectrum::read_csv(bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("p_out_fW"), "{err}");
    }
}
