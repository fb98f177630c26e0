//! Cost-effectiveness determination (CED) curves: `θ̂(λ | x)` against `λ`.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::DataError;
use crate::error::{Error, Result};

/// Willingness-to-pay range of primary interest, drawn solid in plots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimaryRange {
    pub lower: f64,
    pub upper: f64,
}

impl PrimaryRange {
    pub fn contains(&self, lambda: f64) -> bool {
        lambda >= self.lower && lambda <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CedRow {
    pub lambda: f64,
    pub profile: String,
    pub x: Vec<f64>,
    pub theta: f64,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub in_primary_range: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CedCurve {
    pub x_names: Vec<String>,
    pub rows: Vec<CedRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl CedCurve {
    /// Rows of one profile, in increasing `λ`.
    pub fn profile_rows(&self, profile: &str) -> Vec<&CedRow> {
        let mut rows: Vec<&CedRow> = self.rows.iter().filter(|r| r.profile == profile).collect();
        rows.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        rows
    }

    pub fn profiles(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.profile) {
                seen.push(r.profile.clone());
            }
        }
        seen
    }

    /// Columns `lambda, profile, <x names>, theta, ci_lower, ci_upper, in_primary_range`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["lambda".to_string(), "profile".to_string()];
        header.extend(self.x_names.iter().cloned());
        header.extend(["theta", "ci_lower", "ci_upper", "in_primary_range"].map(String::from));
        w.write_record(&header).map_err(DataError::from)?;
        for r in &self.rows {
            let mut rec = vec![r.lambda.to_string(), r.profile.clone()];
            rec.extend(r.x.iter().map(|v| v.to_string()));
            rec.push(r.theta.to_string());
            rec.push(opt(r.ci_lower));
            rec.push(opt(r.ci_upper));
            rec.push(r.in_primary_range.to_string());
            w.write_record(&rec).map_err(DataError::from)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let bad = |msg: String| Error::Document(format!("CED CSV: {msg}"));
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(DataError::from)?
            .iter()
            .map(String::from)
            .collect();
        let n = header.len();
        if n < 6 || header[0] != "lambda" || header[1] != "profile" {
            return Err(bad("header must start with lambda,profile".into()));
        }
        if header[n - 4..] != ["theta", "ci_lower", "ci_upper", "in_primary_range"] {
            return Err(bad(
                "header must end with theta,ci_lower,ci_upper,in_primary_range".into()
            ));
        }
        let x_names = header[2..n - 4].to_vec();
        let num = |s: &str, line: usize| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("line {line}: not a finite number: {s:?}")))
        };
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(DataError::from)?;
            let line = i + 2;
            if rec.len() != n {
                return Err(bad(format!("line {line}: {} fields, expected {n}", rec.len())));
            }
            let optional = |s: &str| -> Result<Option<f64>> {
                if s.trim().is_empty() {
                    Ok(None)
                } else {
                    num(s, line).map(Some)
                }
            };
            rows.push(CedRow {
                lambda: num(&rec[0], line)?,
                profile: rec[1].to_string(),
                x: (2..n - 4).map(|j| num(&rec[j], line)).collect::<Result<_>>()?,
                theta: num(&rec[n - 4], line)?,
                ci_lower: optional(&rec[n - 3])?,
                ci_upper: optional(&rec[n - 2])?,
                in_primary_range: match rec[n - 1].trim() {
                    "true" => true,
                    "false" => false,
                    other => return Err(bad(format!("line {line}: not a boolean: {other:?}"))),
                },
            });
        }
        Ok(Self { x_names, rows })
    }

    /// Line plot with one curve per profile. Segments between two `λ` values in
    /// the primary range are black; the rest are gray.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 400.0;
        const L: f64 = 60.0;
        const R: f64 = 150.0;
        const T: f64 = 20.0;
        const B: f64 = 50.0;
        let (lo, hi) = self.rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| {
            (a.min(r.lambda), b.max(r.lambda))
        });
        let (lo, hi) = if lo.is_finite() && hi > lo {
            (lo, hi)
        } else {
            (lo.min(0.0), lo.max(0.0) + 1.0)
        };
        let px = |l: f64| L + (l - lo) / (hi - lo) * (W - L - R);
        let py = |t: f64| T + (1.0 - t.clamp(0.0, 1.0)) * (H - T - B);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<line x1="{L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
            H - B,
            W - R,
            H - B
        );
        let _ = writeln!(s, r#"<line x1="{L}" y1="{T}" x2="{L}" y2="{}" stroke="black"/>"#, H - B);
        for k in 0..=4 {
            let t = k as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{t:.2}</text>"#,
                L - 6.0,
                py(t) + 4.0
            );
            let l = lo + (hi - lo) * t;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
                px(l),
                H - B + 16.0,
                trim_number(l)
            );
        }
        let _ = writeln!(
            s,
            r#"<line x1="{L}" y1="{:.1}" x2="{}" y2="{:.1}" stroke="gainsboro" stroke-dasharray="4 4"/>"#,
            py(0.5),
            W - R,
            py(0.5)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">willingness to pay</text>"#,
            (L + W - R) / 2.0,
            H - 12.0
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">NBS</text>"#,
            (T + H - B) / 2.0,
            (T + H - B) / 2.0
        );
        let dashes = ["", "6 3", "2 2", "8 3 2 3", "1 3"];
        for (i, profile) in self.profiles().iter().enumerate() {
            let rows = self.profile_rows(profile);
            let dash = dashes[i % dashes.len()];
            for pair in rows.windows(2) {
                let colour = if pair[0].in_primary_range && pair[1].in_primary_range {
                    "black"
                } else {
                    "gray"
                };
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{colour}" stroke-width="2" stroke-dasharray="{dash}"/>"#,
                    px(pair[0].lambda),
                    py(pair[0].theta),
                    px(pair[1].lambda),
                    py(pair[1].theta)
                );
            }
            for r in &rows {
                let colour = if r.in_primary_range { "black" } else { "gray" };
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{colour}"/>"#,
                    px(r.lambda),
                    py(r.theta)
                );
            }
            let ly = T + 16.0 * (i as f64 + 1.0);
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="black" stroke-width="2" stroke-dasharray="{dash}"/>"#,
                W - R + 10.0,
                W - R + 34.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}">{}</text>"#,
                W - R + 40.0,
                ly + 4.0,
                escape(profile)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn trim_number(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve() -> CedCurve {
        let range = PrimaryRange { lower: 2.0, upper: 8.0 };
        let rows = [1.0, 2.0, 5.0, 8.0, 12.0]
            .iter()
            .flat_map(|&l| {
                [0.0, 1.0].map(|x| CedRow {
                    lambda: l,
                    profile: format!("x={x}"),
                    x: vec![x],
                    theta: 0.25 + 0.125 * x + l / 64.0,
                    ci_lower: (x == 1.0).then_some(0.3),
                    ci_upper: (x == 1.0).then_some(0.9),
                    in_primary_range: range.contains(l),
                })
            })
            .collect();
        CedCurve {
            x_names: vec!["x".into()],
            rows,
        }
    }

    #[test]
    fn csv_round_trip() {
        let c = curve();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(
            text.starts_with("lambda,profile,x,theta,ci_lower,ci_upper,in_primary_range\n1,x=0,0,0.265625,,,false\n")
        );
        assert_eq!(CedCurve::read_csv(buf.as_slice()).unwrap(), c);
        assert!(CedCurve::read_csv("lambda,profile,theta\n".as_bytes()).is_err());
    }

    #[test]
    fn svg_styles_primary_range() {
        let svg = curve().to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(
            svg.matches("stroke=\"black\" stroke-width=\"2\" stroke-dasharray=\"\"/>")
                .count(),
            2 + 1
        );
        assert!(svg.contains("gray"));
        assert_eq!(curve().profiles().len(), 2);
    }
}
