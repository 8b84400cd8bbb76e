//! Text formats: the input series, draw dumps, figure tables and study
//! results.
//!
//! Every file written here starts with a `# ` provenance line; the readers
//! skip lines starting with `#`.

use std::io::{BufRead, Read, Write};

use serde::Serialize;

use crate::baseline::BicSelection;
use crate::basis::TimeGrid;
use crate::error::{Error, Result};
use crate::model::{ModelState, SeriesData};
use crate::sampler::{AcceptanceLedger, ChainDraws};
use crate::simstudy::{MethodSummary, ReplicateOutcome};
use crate::summaries::{FitReport, ForecastPopulations};

/// Observed series plus any forecast-only population rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesInput {
    pub data: SeriesData,
    pub forecast: ForecastPopulations,
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
        _ => parse_err(line, e.to_string()),
    }
}

/// Read `year,deaths,population[,forecast_population]` (any column order).
///
/// Rows with an empty `deaths` field lie beyond the observed period and only
/// supply a forecast population, taken from `forecast_population` or else
/// `population`.
pub fn read_series_csv<R: Read>(reader: R) -> Result<SeriesInput> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let header_line = headers.position().map(|p| p.line()).unwrap_or(1);
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let need = |name: &str| {
        col(name).ok_or_else(|| parse_err(header_line, format!("missing column `{name}`")))
    };
    let (cy, cd, cp) = (need("year")?, need("deaths")?, need("population")?);
    let cf = col("forecast_population");

    let mut years = Vec::new();
    let mut counts = Vec::new();
    let mut pops = Vec::new();
    let mut forecast = ForecastPopulations::default();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |c: usize| rec.get(c).unwrap_or("");
        let num = |c: usize, what: &str| -> Result<Option<f64>> {
            let s = field(c);
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Some)
                .ok_or_else(|| parse_err(line, format!("`{what}` is not a number: {s:?}")))
        };
        let year = num(cy, "year")?.ok_or_else(|| parse_err(line, "empty `year`"))?;
        let fpop = match cf {
            Some(c) => num(c, "forecast_population")?,
            None => None,
        };
        let deaths = field(cd);
        if deaths.is_empty() {
            let p = fpop
                .or(num(cp, "population")?)
                .ok_or_else(|| parse_err(line, "forecast row without a population"))?;
            if !(p > 0.0) {
                return Err(parse_err(line, format!("population must be positive: {p}")));
            }
            forecast.overrides.push((year, p));
            continue;
        }
        if !forecast.overrides.is_empty() {
            return Err(parse_err(line, "observed row after a forecast-only row"));
        }
        if fpop.is_some() {
            return Err(parse_err(
                line,
                "`forecast_population` is only allowed on rows without deaths",
            ));
        }
        let y: u64 = deaths
            .parse()
            .map_err(|_| parse_err(line, format!("`deaths` must be a nonnegative integer: {deaths:?}")))?;
        let p = num(cp, "population")?.ok_or_else(|| parse_err(line, "empty `population`"))?;
        if !(p > 0.0) {
            return Err(parse_err(line, format!("population must be positive: {p}")));
        }
        if let Some(&prev) = years.last() {
            if !(year > prev) {
                return Err(parse_err(line, format!("years must increase ({prev} then {year})")));
            }
        }
        years.push(year);
        counts.push(y);
        pops.push(p);
    }
    if let (Some(&last), Some(&(first_fc, _))) = (years.last(), forecast.overrides.first()) {
        if first_fc <= last {
            return Err(parse_err(0, "forecast rows must follow the observed years"));
        }
    }
    let grid = TimeGrid::new(years).map_err(|e| parse_err(0, e.to_string()))?;
    let data = SeriesData::new(grid, counts, pops).map_err(|e| parse_err(0, e.to_string()))?;
    Ok(SeriesInput { data, forecast })
}

pub fn read_series_path(path: &std::path::Path) -> Result<SeriesInput> {
    read_series_csv(std::fs::File::open(path)?)
}

fn provenance_line<W: Write>(w: &mut W, provenance: &str) -> Result<()> {
    writeln!(w, "# {provenance}")?;
    Ok(())
}

fn finish<W: Write>(wtr: csv::Writer<W>) -> Result<()> {
    wtr.into_inner()
        .map_err(|e| Error::Io(e.to_string()))?
        .flush()?;
    Ok(())
}

/// Write an observed series in the input format.
pub fn write_series_csv<W: Write>(mut w: W, data: &SeriesData, provenance: &str) -> Result<()> {
    provenance_line(&mut w, provenance)?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["year", "deaths", "population"]).map_err(csv_err)?;
    for ((t, y), p) in data.grid().times().iter().zip(data.counts()).zip(data.populations()) {
        wtr.write_record([t.to_string(), y.to_string(), p.to_string()])
            .map_err(csv_err)?;
    }
    finish(wtr)
}

fn draws_header(jstar: usize) -> Vec<String> {
    let mut h: Vec<String> = ["iter", "alpha", "beta0", "gamma"].map(String::from).to_vec();
    for prefix in ["delta", "tau", "beta"] {
        h.extend((1..=jstar).map(|j| format!("{prefix}_{j}")));
    }
    h
}

/// One row per stored draw: iter, alpha, beta0, gamma, delta_*, tau_*, beta_*.
pub fn write_draws_csv<W: Write>(mut w: W, chain: &ChainDraws, jstar: usize, provenance: &str) -> Result<()> {
    provenance_line(&mut w, provenance)?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(draws_header(jstar)).map_err(csv_err)?;
    for (it, s) in chain.iters.iter().zip(&chain.states) {
        let mut row = vec![
            it.to_string(),
            s.alpha.to_string(),
            s.beta0.to_string(),
            s.gamma.to_string(),
        ];
        row.extend(s.delta.iter().map(|&d| u8::from(d).to_string()));
        row.extend(s.tau.iter().map(f64::to_string));
        row.extend(s.beta.iter().map(f64::to_string));
        wtr.write_record(&row).map_err(csv_err)?;
    }
    finish(wtr)
}

/// Inverse of [`write_draws_csv`]; the acceptance ledger is not stored and
/// comes back empty.
pub fn read_draws_csv<R: Read>(reader: R, chain: usize) -> Result<ChainDraws> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let jstar = headers.iter().filter(|h| h.starts_with("delta_")).count();
    let expected = draws_header(jstar);
    if headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(1, "unexpected draws header"));
    }
    let mut iters = Vec::new();
    let mut states = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let f = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("bad value {:?}", &rec[i])))
        };
        iters.push(
            rec[0]
                .parse::<usize>()
                .map_err(|_| parse_err(line, "bad iteration index"))?,
        );
        let delta = (0..jstar)
            .map(|j| match &rec[4 + j] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(parse_err(line, format!("bad indicator {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        states.push(ModelState {
            alpha: f(1)?,
            beta0: f(2)?,
            gamma: f(3)?,
            delta,
            tau: (0..jstar).map(|j| f(4 + jstar + j)).collect::<Result<_>>()?,
            beta: (0..jstar).map(|j| f(4 + 2 * jstar + j)).collect::<Result<_>>()?,
        });
    }
    Ok(ChainDraws {
        chain,
        iters,
        states,
        acceptance: AcceptanceLedger::new(jstar),
    })
}

/// First line of a written file without the leading `# `.
pub fn read_provenance<R: BufRead>(mut reader: R) -> Result<Option<String>> {
    let mut line = String::new();
    reader.read_line(&mut line)?;
    Ok(line
        .strip_prefix("# ")
        .map(|s| s.trim_end().to_string()))
}

pub fn write_json<W: Write, T: Serialize>(mut w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trend_csv<W: Write>(mut w: W, report: &FitReport) -> Result<()> {
    provenance_line(&mut w, &report.provenance)?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "time",
        "forecast",
        "population",
        "observed_rate",
        "mean",
        "lower",
        "upper",
        "expected_count",
    ])
    .map_err(csv_err)?;
    for p in &report.trend {
        wtr.write_record([
            p.time.to_string(),
            u8::from(p.forecast).to_string(),
            p.population.to_string(),
            opt(p.observed_rate),
            p.mean.to_string(),
            p.lower.to_string(),
            p.upper.to_string(),
            p.expected_count.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(wtr)
}

pub fn write_pmf_csv<W: Write>(mut w: W, report: &FitReport) -> Result<()> {
    provenance_line(&mut w, &report.provenance)?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["joinpoints", "probability"]).map_err(csv_err)?;
    for (k, p) in report.joinpoint_pmf.iter().enumerate() {
        wtr.write_record([k.to_string(), p.to_string()]).map_err(csv_err)?;
    }
    finish(wtr)
}

pub fn write_cumprob_csv<W: Write>(mut w: W, report: &FitReport) -> Result<()> {
    provenance_line(&mut w, &report.provenance)?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["time", "probability"]).map_err(csv_err)?;
    for (t, p) in &report.cumulative_change {
        wtr.write_record([t.to_string(), p.to_string()]).map_err(csv_err)?;
    }
    finish(wtr)
}

/// Ordered active locations of the draws with exactly `k` joinpoints.
pub fn write_conditional_csv<W: Write>(mut w: W, report: &FitReport, k: usize) -> Result<()> {
    provenance_line(&mut w, &report.provenance)?;
    let cond = report
        .conditional_locations
        .iter()
        .find(|c| c.k == k)
        .ok_or_else(|| Error::InvalidConfig(format!("no conditional locations for k = {k}")))?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record((1..=k).map(|r| format!("tau_{r}"))).map_err(csv_err)?;
    for s in &cond.samples {
        wtr.write_record(s.iter().map(f64::to_string)).map_err(csv_err)?;
    }
    finish(wtr)
}

/// Per-rank 1-year histograms of the conditional locations.
pub fn write_conditional_histogram_csv<W: Write>(mut w: W, report: &FitReport, k: usize) -> Result<()> {
    provenance_line(&mut w, &report.provenance)?;
    let cond = report
        .conditional_locations
        .iter()
        .find(|c| c.k == k)
        .ok_or_else(|| Error::InvalidConfig(format!("no conditional locations for k = {k}")))?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["rank", "bin_start", "bin_end", "count"]).map_err(csv_err)?;
    for (r, h) in cond.marginals.iter().enumerate() {
        for (i, c) in h.counts.iter().enumerate() {
            let lo = h.start + i as f64 * h.width;
            wtr.write_record([
                (r + 1).to_string(),
                lo.to_string(),
                (lo + h.width).to_string(),
                c.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(wtr)
}

/// `j, loglik, bic, chosen, tau_1..tau_jmax` (unused location cells empty).
pub fn write_bic_csv<W: Write>(mut w: W, sel: &BicSelection, provenance: &str) -> Result<()> {
    provenance_line(&mut w, provenance)?;
    let jmax = sel.rows.iter().map(|r| r.j).max().unwrap_or(0);
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["j", "loglik", "bic", "chosen"].map(String::from).to_vec();
    header.extend((1..=jmax).map(|j| format!("tau_{j}")));
    wtr.write_record(&header).map_err(csv_err)?;
    for (i, row) in sel.rows.iter().enumerate() {
        let mut rec = vec![
            row.j.to_string(),
            row.fit.log_likelihood.to_string(),
            row.bic.to_string(),
            u8::from(i == sel.chosen).to_string(),
        ];
        rec.extend((0..jmax).map(|j| opt(row.fit.taus.get(j).copied())));
        wtr.write_record(&rec).map_err(csv_err)?;
    }
    finish(wtr)
}

/// One row per (scenario, replicate, method); wall-clock excluded.
pub fn write_study_csv<W: Write>(
    mut w: W,
    outcomes: &[ReplicateOutcome],
    jstar: usize,
    provenance: &str,
) -> Result<()> {
    provenance_line(&mut w, provenance)?;
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = [
        "scenario",
        "method",
        "replicate",
        "data_seed",
        "selected_j",
        "tau_covered",
        "error",
    ]
    .map(String::from)
    .to_vec();
    header.extend((0..=jstar).map(|k| format!("p_{k}")));
    wtr.write_record(&header).map_err(csv_err)?;
    for o in outcomes {
        let mut rec = vec![
            o.scenario.clone(),
            o.method.name().to_string(),
            o.replicate.to_string(),
            o.data_seed.to_string(),
            o.selected_j.map(|j| j.to_string()).unwrap_or_default(),
            o.covered.map(|c| u8::from(c).to_string()).unwrap_or_else(|| "NA".into()),
            o.error.clone().unwrap_or_default(),
        ];
        rec.extend((0..=jstar).map(|k| opt(o.pmf.get(k).copied())));
        wtr.write_record(&rec).map_err(csv_err)?;
    }
    finish(wtr)
}

/// Per-scenario and per-method aggregates, wall-clock excluded.
pub fn write_study_summary_csv<W: Write>(mut w: W, rows: &[MethodSummary], provenance: &str) -> Result<()> {
    provenance_line(&mut w, provenance)?;
    let width = rows.iter().map(|r| r.selection_counts.len()).max().unwrap_or(0);
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = [
        "scenario",
        "method",
        "true_j",
        "replicates",
        "failures",
        "covered",
        "assessed",
    ]
    .map(String::from)
    .to_vec();
    header.extend((0..width).map(|j| format!("selected_{j}")));
    wtr.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let (c, n) = r
            .coverage
            .map(|(c, n)| (c.to_string(), n.to_string()))
            .unwrap_or_else(|| ("NA".into(), "NA".into()));
        let mut rec = vec![
            r.scenario.clone(),
            r.method.name().to_string(),
            r.true_j.to_string(),
            r.replicates.to_string(),
            r.failures.to_string(),
            c,
            n,
        ];
        rec.extend((0..width).map(|j| r.selection_counts.get(j).copied().unwrap_or(0).to_string()));
        wtr.write_record(&rec).map_err(csv_err)?;
    }
    finish(wtr)
}

/// Wall-clock seconds per fit, kept apart from the reproducible tables.
pub fn write_study_timing_csv<W: Write>(mut w: W, outcomes: &[ReplicateOutcome], provenance: &str) -> Result<()> {
    provenance_line(&mut w, provenance)?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["scenario", "method", "replicate", "seconds"]).map_err(csv_err)?;
    for o in outcomes {
        wtr.write_record([
            o.scenario.clone(),
            o.method.name().to_string(),
            o.replicate.to_string(),
            format!("{:.6}", o.seconds),
        ])
        .map_err(csv_err)?;
    }
    finish(wtr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::AcceptanceLedger;

    #[test]
    fn reads_series_with_forecast_rows() {
        let text = "year,deaths,population,forecast_population\n\
                    2001,3,1000,\n2002,0,1000,\n2003,5,1100,\n2004,2,1200,\n\
                    2005,,,1300\n2006,,1400,\n";
        let input = read_series_csv(text.as_bytes()).unwrap();
        assert_eq!(input.data.counts(), &[3, 0, 5, 2]);
        assert_eq!(input.forecast.overrides, vec![(2005.0, 1300.0), (2006.0, 1400.0)]);
    }

    #[test]
    fn column_order_and_comments() {
        let text = "# note\npopulation,year,deaths\n10,1,1\n10,2,2\n10,3,3\n10,4,4\n";
        let input = read_series_csv(text.as_bytes()).unwrap();
        assert_eq!(input.data.grid().times(), &[1.0, 2.0, 3.0, 4.0]);
    }

    fn err_line(text: &str) -> (u64, String) {
        match read_series_csv(text.as_bytes()) {
            Err(Error::Parse { line, message }) => (line, message),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_line_and_column() {
        let (line, msg) = err_line("year,deaths\n1,2\n");
        assert_eq!(line, 1);
        assert!(msg.contains("population"), "{msg}");

        let (line, msg) = err_line("year,deaths,population\n1,2,10\n2,x,10\n");
        assert_eq!(line, 3);
        assert!(msg.contains("deaths"), "{msg}");

        let (line, _) = err_line("year,deaths,population\n1,2,10\n2,3,-1\n");
        assert_eq!(line, 3);

        let (line, _) = err_line("year,deaths,population\n1,2,10\n1,3,10\n");
        assert_eq!(line, 3);

        let (line, _) = err_line("year,deaths,population\n1,2,10\n2,3\n");
        assert_eq!(line, 3);
    }

    #[test]
    fn series_round_trip() {
        let text = "year,deaths,population\n1980,60,285000\n1981,0,285000.5\n1983,70,286000\n1984,65,287000\n";
        let a = read_series_csv(text.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_series_csv(&mut buf, &a.data, "test").unwrap();
        let b = read_series_csv(buf.as_slice()).unwrap();
        assert_eq!(a, b);
        assert_eq!(read_provenance(buf.as_slice()).unwrap().as_deref(), Some("test"));
    }

    #[test]
    fn draws_round_trip() {
        let states = vec![
            ModelState {
                alpha: -7.25,
                beta0: 0.0125,
                beta: vec![0.1, -0.3],
                tau: vec![4.5, 9.0 + 1.0 / 3.0],
                delta: vec![true, false],
                gamma: 2.5,
            },
            ModelState {
                alpha: -7.0,
                beta0: -1e-17,
                beta: vec![0.0, 1.0],
                tau: vec![3.25, 8.0],
                delta: vec![false, true],
                gamma: 0.01,
            },
        ];
        let chain = ChainDraws {
            chain: 3,
            iters: vec![100, 110],
            states,
            acceptance: AcceptanceLedger::new(2),
        };
        let mut buf = Vec::new();
        write_draws_csv(&mut buf, &chain, 2, "p").unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("iter,alpha,beta0,gamma,delta_1,delta_2,tau_1"));
        let back = read_draws_csv(buf.as_slice(), 3).unwrap();
        assert_eq!(back, chain);
    }
}
