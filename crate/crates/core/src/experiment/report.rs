//! CSV and plot-table output. Column meanings are listed in `docs/formats.md`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Aggregate, DecoderSpec, Prepared, SearchDump, SweepRecord, SweepResult};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;

pub const CSV_HEADER: &str = "s,decoder,k,N,epsilon,restart_seed,length_ratio,uniq1,uniq2,uniq4,uniq6,bleu,entropy_nats,mass_coverage,unique_samples,excluded";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_STD_CSV: &str = "sweep_std.csv";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn row(s: u32, decoder: DecoderSpec, epsilon: f64, seed: &str, m: &MetricReport, excluded: bool) -> String {
    let mut line = format!(
        "{s},{},{},{},{epsilon},{seed}",
        decoder.kind(),
        opt(decoder.k()),
        opt(decoder.n())
    );
    for v in m.values() {
        line.push(',');
        line.push_str(&opt(v));
    }
    write!(line, ",{excluded}").unwrap();
    line
}

pub fn record_row(r: &SweepRecord) -> String {
    row(r.s, r.decoder, r.epsilon, &r.restart_seed.to_string(), &r.metrics, r.excluded)
}

fn aggregate_row(a: &Aggregate, std: bool) -> String {
    if std {
        row(a.s, a.decoder, a.epsilon, "std", &a.std, a.excluded)
    } else {
        row(a.s, a.decoder, a.epsilon, "mean", &a.mean, a.excluded)
    }
}

/// Records, then one `mean` row per cell.
pub fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &result.records {
        out.push_str(&record_row(r));
        out.push('\n');
    }
    for a in &result.aggregates {
        out.push_str(&aggregate_row(a, false));
        out.push('\n');
    }
    out
}

/// One `std` row per cell.
pub fn sweep_std_csv(result: &SweepResult) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for a in &result.aggregates {
        out.push_str(&aggregate_row(a, true));
        out.push('\n');
    }
    out
}

fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "nan".into())
}

struct Table {
    text: String,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Table {
            text: format!("# {}\n", columns.join(" ")),
        }
    }

    fn push(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(" "));
        self.text.push('\n');
    }
}

fn reference(result: &SweepResult, n: usize) -> String {
    num(result.reference_repetition.iter().find(|(m, _)| *m == n).map(|(_, v)| *v))
}

/// Plot tables keyed by file name.
pub fn plot_tables(result: &SweepResult, orders: &[usize]) -> Vec<(&'static str, String)> {
    let samples: Vec<&Aggregate> = result.aggregates.iter().filter(|a| !a.decoder.is_search()).collect();
    let search: Vec<&Aggregate> = result
        .aggregates
        .iter()
        .filter(|a| a.decoder.is_search() && !a.excluded)
        .collect();
    let k = |a: &Aggregate| opt(a.decoder.k());
    let mut tables = Vec::new();

    for (name, pick) in [
        ("fig2a.dat", (|m: &MetricReport| m.entropy_nats) as fn(&MetricReport) -> Option<f64>),
        ("fig2b.dat", |m| m.mass_coverage),
        ("fig2c.dat", |m| m.unique_samples),
    ] {
        let mut t = Table::new(&["s", "epsilon", "mean", "std"]);
        for a in &samples {
            t.push(&[a.s.to_string(), a.epsilon.to_string(), num(pick(&a.mean)), num(pick(&a.std))]);
        }
        tables.push((name, t.text));
    }

    for (name, pick) in [
        ("fig3.dat", (|m: &MetricReport| m.bleu) as fn(&MetricReport) -> Option<f64>),
        ("fig4.dat", |m| m.length_ratio),
    ] {
        let mut t = Table::new(&["s", "k", "epsilon", "mean", "std"]);
        for a in &search {
            t.push(&[a.s.to_string(), k(a), a.epsilon.to_string(), num(pick(&a.mean)), num(pick(&a.std))]);
        }
        tables.push((name, t.text));
    }

    let mut t = Table::new(&["s", "k", "epsilon", "n", "mean", "std", "reference"]);
    for a in &search {
        for &n in orders {
            t.push(&[
                a.s.to_string(),
                k(a),
                a.epsilon.to_string(),
                n.to_string(),
                num(a.mean.uniq(n)),
                num(a.std.uniq(n)),
                reference(result, n),
            ]);
        }
    }
    tables.push(("fig5.dat", t.text));

    let mut t = Table::new(&["s", "epsilon", "mean", "std"]);
    for a in &samples {
        t.push(&[a.s.to_string(), a.epsilon.to_string(), num(a.mean.length_ratio), num(a.std.length_ratio)]);
    }
    tables.push(("fig6.dat", t.text));

    let mut t = Table::new(&["s", "epsilon", "n", "mean", "std", "reference"]);
    for a in &samples {
        for &n in orders {
            t.push(&[
                a.s.to_string(),
                a.epsilon.to_string(),
                n.to_string(),
                num(a.mean.uniq(n)),
                num(a.std.uniq(n)),
                reference(result, n),
            ]);
        }
    }
    tables.push(("fig7.dat", t.text));

    let mut t = Table::new(&["s", "epsilon", "entropy", "mass_coverage", "unique_samples"]);
    for a in &samples {
        t.push(&[
            a.s.to_string(),
            a.epsilon.to_string(),
            num(a.mean.entropy_nats),
            num(a.mean.mass_coverage),
            num(a.mean.unique_samples),
        ]);
    }
    tables.push(("fig8.dat", t.text));

    let mut t = Table::new(&["s", "decoder", "k", "epsilon", "length_ratio", "uniq1"]);
    for a in samples.iter().chain(&search) {
        t.push(&[
            a.s.to_string(),
            a.decoder.kind().to_string(),
            if a.decoder.is_search() { k(a) } else { "-".into() },
            a.epsilon.to_string(),
            num(a.mean.length_ratio),
            num(a.mean.uniq1),
        ]);
    }
    tables.push(("fig9.dat", t.text));
    tables
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn dump_file_name(d: &SearchDump) -> String {
    format!("s{}_eps{}_{}.txt", d.s, d.epsilon, d.decoder.cell_id())
}

/// Writes CSVs, `plots/`, optional `outputs/` and `lambdas.tsv` into `dir`.
pub fn write_report(
    dir: &Path,
    result: &SweepResult,
    orders: &[usize],
    dumps: &[SearchDump],
    prepared: Option<&Prepared>,
) -> Result<Vec<PathBuf>> {
    let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    mkdir(dir)?;
    let mut written = Vec::new();
    let mut put = |path: PathBuf, text: &str| -> Result<()> {
        write(&path, text)?;
        written.push(path);
        Ok(())
    };
    put(dir.join(SWEEP_CSV), &sweep_csv(result))?;
    put(dir.join(SWEEP_STD_CSV), &sweep_std_csv(result))?;
    let mut lambdas = String::from("s\tlambda\n");
    for (s, l) in &result.lambdas {
        writeln!(lambdas, "{s}\t{l}").unwrap();
    }
    put(dir.join("lambdas.tsv"), &lambdas)?;
    let plots = dir.join("plots");
    mkdir(&plots)?;
    for (name, text) in plot_tables(result, orders) {
        put(plots.join(name), &text)?;
    }
    if let (false, Some(prepared)) = (dumps.is_empty(), prepared) {
        let outputs = dir.join("outputs");
        mkdir(&outputs)?;
        for d in dumps {
            let mut buf = Vec::new();
            let words: Vec<Vec<String>> = d
                .outputs
                .iter()
                .map(|h| prepared.words(&h.tokens))
                .collect::<Result<_>>()?;
            crate::decoding::write_dump(
                &mut buf,
                d.outputs
                    .iter()
                    .zip(&words)
                    .enumerate()
                    .map(|(i, (h, w))| (i, h.logprob, w.as_slice())),
            )
            .map_err(|e| Error::io(&outputs, e))?;
            put(outputs.join(dump_file_name(d)), std::str::from_utf8(&buf).expect("utf-8"))?;
        }
    }
    Ok(written)
}

/// Parses a dump back into word sequences, in sentence order.
pub fn read_dump(text: &str) -> Result<Vec<Vec<String>>> {
    text.lines()
        .map(|l| {
            let mut parts = l.splitn(3, '\t');
            let (Some(_), Some(_), words) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::format("dump", format!("bad line {l:?}")));
            };
            Ok(words.unwrap_or("").split_whitespace().map(str::to_owned).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{run_sweep, score_search, CorpusSpec, SweepConfig, ToyConfig};

    #[test]
    fn csv_shape() {
        let cfg = SweepConfig {
            s_values: vec![0, 100],
            beam_sizes: vec![1],
            samples_per_sentence: 3,
            restarts: 2,
            epsilons: vec![0.0],
            dump_outputs: true,
            corpus: CorpusSpec::Toy(ToyConfig {
                train: 200,
                dev: 10,
                test: 10,
                copy_noise: 0,
                ..ToyConfig::default()
            }),
            ..SweepConfig::default()
        };
        let (res, dumps) = run_sweep(&cfg, 2).unwrap();
        let csv = sweep_csv(&res);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 1 + 8 + 4);
        let greedy_s0 = lines.iter().find(|l| l.starts_with("0,greedy,1,,0,")).unwrap();
        assert!(greedy_s0.ends_with(",,,,true"), "{greedy_s0}");
        let sample_mean = lines.iter().find(|l| l.starts_with("100,sample,,3,0,mean,")).unwrap();
        assert!(sample_mean.ends_with(",false"));
        assert_eq!(lines[1].split(',').count(), 16);

        // metrics recompute from the dumped outputs
        let dir = tempfile::tempdir().unwrap();
        let prepared = Prepared::new(&cfg).unwrap();
        write_report(dir.path(), &res, &cfg.repetition_orders, &dumps, Some(&prepared)).unwrap();
        let rec = res
            .records
            .iter()
            .find(|r| r.s == 100 && r.decoder.is_search())
            .unwrap();
        let d = dumps.iter().find(|d| d.s == 100).unwrap();
        let text = fs::read_to_string(dir.path().join("outputs").join(dump_file_name(d))).unwrap();
        let words = read_dump(&text).unwrap();
        let again = score_search(&words, prepared.test_references(), &cfg.repetition_orders).unwrap();
        assert_eq!(again, rec.metrics);
        for f in ["fig2a", "fig2b", "fig2c", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9"] {
            assert!(dir.path().join("plots").join(format!("{f}.dat")).exists());
        }
    }
}
