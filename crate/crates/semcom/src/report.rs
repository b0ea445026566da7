//! CSV and SVG output. Floats are written in their shortest round-trip
//! form, so reading a CSV back gives the in-memory values exactly.

use std::fmt::Write as _;
use std::io;

use semcom_core::channel::{ChannelKind, ChannelRealization};
use semcom_core::csa::{RoundLog, Side};
use semcom_core::dataset::{ClassCatalog, Splits};
use semcom_core::geometry::LinkBudgetReport;
use semcom_core::modem::{Constellation, Modulation};

use crate::harness::{ConfusionMatrix, SweepResult, SweepRow};
use crate::Error;

pub const LINKBUDGET_HEADER: [&str; 8] = ["d_km", "fspl_db", "sf_db", "gas_db", "scint_db", "total_db", "zeta_db", "doppler_hz"];
pub const REALIZATION_HEADER: [&str; 6] = ["kind", "re", "im", "noise_var", "doppler", "delay"];
pub const CONSTELLATION_HEADER: [&str; 4] = ["index", "bits", "re", "im"];
pub const ROUND_LOG_HEADER: [&str; 6] = ["round", "side", "top1", "ce_loss", "sa_loss", "bits_tx"];
pub const DATASET_SUMMARY_HEADER: [&str; 4] = ["class", "count_train", "count_val", "count_test"];
pub const SWEEP_HEADER: [&str; 6] = ["channel", "modulation", "K", "psnr_db", "seed", "top1"];
pub const CONFUSION_HEADER: [&str; 4] = ["true_class", "pred_class", "count", "row_pct"];

fn writer<W: io::Write>(w: W, header: &[&str]) -> Result<csv::Writer<W>, Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    Ok(out)
}

fn reader<R: io::Read>(r: R, header: &[&str]) -> Result<csv::Reader<R>, Error> {
    let mut rd = csv::Reader::from_reader(r);
    let found: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    if found != header {
        return Err(Error::Parse(format!("expected header {}, found {}", header.join(","), found.join(","))));
    }
    Ok(rd)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T, Error> {
    let raw = rec.get(i).ok_or_else(|| Error::Parse(format!("missing column {name}")))?;
    raw.parse().map_err(|_| Error::Parse(format!("bad {name}: {raw}")))
}

pub fn write_linkbudget_csv<W: io::Write>(w: W, r: &LinkBudgetReport) -> Result<(), Error> {
    let mut out = writer(w, &LINKBUDGET_HEADER)?;
    let d = &r.downlink;
    let row = [d.distance_km, d.fspl_db, d.shadow_db, d.gas_db, d.scint_db, d.total_db, r.zeta_db, r.doppler_hz];
    out.write_record(row.iter().map(f64::to_string))?;
    out.flush()?;
    Ok(())
}

pub fn write_realizations_csv<W: io::Write>(w: W, rows: &[ChannelRealization]) -> Result<(), Error> {
    let mut out = writer(w, &REALIZATION_HEADER)?;
    for r in rows {
        out.write_record([
            r.kind.name().to_string(),
            r.gain.re.to_string(),
            r.gain.im.to_string(),
            r.noise_variance.to_string(),
            r.doppler_hz.to_string(),
            r.delay_s.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_constellation_csv<W: io::Write>(w: W, c: &Constellation) -> Result<(), Error> {
    let mut out = writer(w, &CONSTELLATION_HEADER)?;
    let width = c.bits_per_symbol() as usize;
    for (i, (p, label)) in c.points().iter().zip(c.labels()).enumerate() {
        out.write_record([i.to_string(), format!("{label:0width$b}"), p.re.to_string(), p.im.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_round_log_csv<W: io::Write>(w: W, logs: &[RoundLog]) -> Result<(), Error> {
    let mut out = writer(w, &ROUND_LOG_HEADER)?;
    for l in logs {
        out.write_record([
            l.round.to_string(),
            l.side.name().to_string(),
            l.top1.to_string(),
            l.ce_loss.to_string(),
            l.sa_loss.to_string(),
            l.bits_tx.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_round_log_csv<R: io::Read>(r: R) -> Result<Vec<RoundLog>, Error> {
    let mut rd = reader(r, &ROUND_LOG_HEADER)?;
    let mut logs = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let side: String = field(&rec, 1, "side")?;
        logs.push(RoundLog {
            round: field(&rec, 0, "round")?,
            side: Side::from_name(&side).ok_or_else(|| Error::Parse(format!("bad side: {side}")))?,
            top1: field(&rec, 2, "top1")?,
            ce_loss: field(&rec, 3, "ce_loss")?,
            sa_loss: field(&rec, 4, "sa_loss")?,
            bits_tx: field(&rec, 5, "bits_tx")?,
        });
    }
    Ok(logs)
}

pub fn write_dataset_summary_csv<W: io::Write>(w: W, catalog: &ClassCatalog, splits: &Splits) -> Result<(), Error> {
    let mut out = writer(w, &DATASET_SUMMARY_HEADER)?;
    let c = catalog.len();
    let counts = [splits.train.class_counts(c), splits.val.class_counts(c), splits.test.class_counts(c)];
    for (i, name) in catalog.names().iter().enumerate() {
        out.write_record([name.clone(), counts[0][i].to_string(), counts[1][i].to_string(), counts[2][i].to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: io::Write>(w: W, result: &SweepResult) -> Result<(), Error> {
    let mut out = writer(w, &SWEEP_HEADER)?;
    for r in &result.rows {
        out.write_record([
            r.channel.name().to_string(),
            r.modulation.name().to_string(),
            r.k.to_string(),
            r.psnr_db.to_string(),
            r.seed.to_string(),
            r.top1.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: io::Read>(r: R) -> Result<SweepResult, Error> {
    let mut rd = reader(r, &SWEEP_HEADER)?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let (ch, m): (String, String) = (field(&rec, 0, "channel")?, field(&rec, 1, "modulation")?);
        rows.push(SweepRow {
            channel: ChannelKind::from_name(&ch).ok_or_else(|| Error::Parse(format!("bad channel: {ch}")))?,
            modulation: Modulation::from_name(&m).ok_or_else(|| Error::Parse(format!("bad modulation: {m}")))?,
            k: field(&rec, 2, "K")?,
            psnr_db: field(&rec, 3, "psnr_db")?,
            seed: field(&rec, 4, "seed")?,
            top1: field(&rec, 5, "top1")?,
        });
    }
    Ok(SweepResult { rows })
}

pub fn write_confusion_csv<W: io::Write>(w: W, cm: &ConfusionMatrix) -> Result<(), Error> {
    let mut out = writer(w, &CONFUSION_HEADER)?;
    for (i, row) in cm.counts.iter().enumerate() {
        for (j, count) in row.iter().enumerate() {
            out.write_record([cm.classes[i].clone(), cm.classes[j].clone(), count.to_string(), cm.row_pct[i][j].to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_confusion_csv<R: io::Read>(r: R) -> Result<ConfusionMatrix, Error> {
    let mut rd = reader(r, &CONFUSION_HEADER)?;
    let mut classes: Vec<String> = Vec::new();
    let mut cells = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let (t, p): (String, String) = (field(&rec, 0, "true_class")?, field(&rec, 1, "pred_class")?);
        for name in [&t, &p] {
            if !classes.contains(name) {
                classes.push(name.clone());
            }
        }
        cells.push((t, p, field::<usize>(&rec, 2, "count")?, field::<f64>(&rec, 3, "row_pct")?));
    }
    let n = classes.len();
    let index = |s: &str| classes.iter().position(|c| c == s).expect("collected above");
    let (mut counts, mut row_pct) = (vec![vec![0; n]; n], vec![vec![0.0; n]; n]);
    for (t, p, count, pct) in &cells {
        counts[index(t)][index(p)] = *count;
        row_pct[index(t)][index(p)] = *pct;
    }
    Ok(ConfusionMatrix { classes, counts, row_pct })
}

/// Accuracy-vs-PSNR line plot with one polyline per (channel, K), seeds
/// averaged. Each polyline carries its points in `data-points` as
/// `psnr:top1` pairs.
pub fn sweep_svg(result: &SweepResult) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let finite = result.rows.iter().map(|r| r.psnr_db).filter(|p| p.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p), b.max(p)));
    let (lo, hi) = if lo.is_finite() { (lo, if hi > lo { hi } else { lo + 1.0 }) } else { (0.0, 1.0) };
    let x = |p: f64| M + (p.clamp(lo, hi) - lo) / (hi - lo) * (W - 2.0 * M);
    let y = |a: f64| H - M - a * (H - 2.0 * M);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{M} {} V{} H{}" fill="none" stroke="black"/>"#,
        M,
        H - M,
        W - M
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">PSNR (dB)</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">Top-1</text>"#, H / 2.0, H / 2.0);
    for (i, (channel, k)) in result.series_keys().into_iter().enumerate() {
        let pts = result.series(channel, k);
        let coords: Vec<String> = pts.iter().map(|&(p, a)| format!("{:.2},{:.2}", x(p), y(a))).collect();
        let data: Vec<String> = pts.iter().map(|&(p, a)| format!("{p}:{a}")).collect();
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(
            s,
            r#"<polyline data-channel="{}" data-k="{k}" data-points="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            channel.name(),
            data.join(" "),
            coords.join(" ")
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{} K={k}</text>"#, W - M - 110.0, M + 16.0 * i as f64, channel.name());
    }
    s.push_str("</svg>\n");
    s
}
