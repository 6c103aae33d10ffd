use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use binhash::dataset::{make_gaussian_clusters, LabeledDataset, ToyConfig};
use binhash::io;
use binhash::metrics::{distance_histograms, evaluate_retrieval};
use binhash::{Codebook, EncoderParams, EvalReport, HadamardRows, HammingIndex, PackedCode, TrainConfig};

#[derive(Parser)]
#[command(name = "binhash", version, about = "Train and evaluate binary hash codes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Hadamard,
    Bernoulli,
    Heuristic,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rows {
    Paired,
    Stacked,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a target codebook.
    GenCodebook {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        bits: usize,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Greedy improvement steps for `heuristic`.
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        /// Row order when C > K for `hadamard`.
        #[arg(long, value_enum, default_value_t = Rows::Paired)]
        rows: Rows,
        /// Without an output file the codebook is only summarized.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a labeled Gaussian-cluster toy dataset.
    MakeToy {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        #[arg(long)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_data: PathBuf,
        #[arg(long)]
        out_labels: PathBuf,
        #[arg(long)]
        multilabel: bool,
        /// Fraction of each class held out as queries.
        #[arg(long, default_value_t = 0.0)]
        query_fraction: f64,
        #[arg(long, requires = "out_query_labels")]
        out_query_data: Option<PathBuf>,
        #[arg(long, requires = "out_query_data")]
        out_query_labels: Option<PathBuf>,
    },
    /// Train an encoder against a codebook.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long)]
        out_history: PathBuf,
    },
    /// Encode descriptors into packed binary codes.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_codes: PathBuf,
        /// Re-estimate BN statistics on this descriptor file first.
        #[arg(long)]
        recalibrate_with: Option<PathBuf>,
        /// Also write the continuous codes as a descriptor file.
        #[arg(long)]
        out_continuous: Option<PathBuf>,
    },
    /// Build a Hamming index from a codes file.
    Index {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-R Hamming search for every code in a codes file.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        top: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// mAP@R of query codes against an index.
    Evaluate {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        query_codes: PathBuf,
        #[arg(long)]
        db_labels: PathBuf,
        #[arg(long)]
        query_labels: PathBuf,
        #[arg(long = "R")]
        r: usize,
        #[arg(long)]
        out_report: PathBuf,
    },
    /// Distance, orthogonality, balance and quantization analysis.
    Analyze {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        continuous: Option<PathBuf>,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 16)]
        bins: usize,
        /// Defaults to one more than the largest label.
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        out_report: PathBuf,
        #[arg(long)]
        out_histograms: Option<PathBuf>,
    },
    /// Re-encode a toolkit file and check the bytes are unchanged.
    Roundtrip {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load<T>(path: &Path, decode: impl FnOnce(&[u8]) -> binhash::Result<T>) -> Result<T> {
    let bytes = read(path)?;
    decode(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn load_labels(path: &Path) -> Result<Vec<(u64, Vec<usize>)>> {
    let text = String::from_utf8(read(path)?).with_context(|| format!("{} is not UTF-8", path.display()))?;
    io::parse_labels(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_descriptors(path: &Path) -> Result<Array2<f64>> {
    load(path, io::decode_descriptors::<f64>)
}

fn numbered(codes: Vec<PackedCode>) -> Vec<(u64, PackedCode)> {
    (0u64..).zip(codes).collect()
}

fn gen_codebook(
    classes: usize,
    bits: usize,
    method: Method,
    seed: u64,
    iterations: usize,
    rows: Rows,
    out: Option<&Path>,
) -> Result<()> {
    let cb = match method {
        Method::Hadamard => {
            let rows = match rows {
                Rows::Paired => HadamardRows::Paired,
                Rows::Stacked => HadamardRows::Stacked,
            };
            Codebook::hadamard(classes, bits, rows)?
        }
        Method::Bernoulli => Codebook::bernoulli(classes, bits, seed)?,
        Method::Heuristic => Codebook::bernoulli(classes, bits, seed)?.improve(iterations.max(1), seed),
    };
    let min = if classes >= 2 {
        cb.min_pairwise_distance()?.to_string()
    } else {
        "-".into()
    };
    println!(
        "codebook {} C={} K={} min_distance={min}",
        cb.method().as_str(),
        classes,
        bits
    );
    if let Some(out) = out {
        write(out, io::encode_codebook(&cb)?)?;
    }
    Ok(())
}

fn make_toy(
    cfg: ToyConfig,
    out_data: &Path,
    out_labels: &Path,
    query_fraction: f64,
    query_out: Option<(&Path, &Path)>,
) -> Result<()> {
    let data: LabeledDataset<f64> = make_gaussian_clusters(&cfg)?;
    let (db, queries) = if query_out.is_some() {
        data.split_queries(query_fraction, cfg.seed)?
    } else if query_fraction > 0.0 {
        bail!("--query-fraction needs --out-query-data and --out-query-labels");
    } else {
        (
            data,
            LabeledDataset::new(Array2::zeros((0, cfg.dim)), Vec::new(), cfg.classes)?,
        )
    };
    let save = |set: &LabeledDataset<f64>, data: &Path, labels: &Path| -> Result<()> {
        write(data, io::encode_descriptors(set.descriptors.view())?)?;
        let rows: Vec<(u64, Vec<usize>)> = (0u64..).zip(set.labels.iter().cloned()).collect();
        write(labels, io::format_labels(&rows))
    };
    save(&db, out_data, out_labels)?;
    if let Some((qd, ql)) = query_out {
        save(&queries, qd, ql)?;
    }
    println!("wrote {} database and {} query rows", db.len(), queries.len());
    Ok(())
}

fn train(
    data: &Path,
    labels: &Path,
    codebook: &Path,
    config: &Path,
    out_model: &Path,
    out_history: &Path,
) -> Result<()> {
    let cfg_text = String::from_utf8(read(config)?).context("config is not UTF-8")?;
    let cfg: TrainConfig = serde_json::from_str(&cfg_text).with_context(|| format!("parsing {}", config.display()))?;
    let cb = load(codebook, io::decode_codebook)?;
    let x = load_descriptors(data)?;
    let labels = io::labels_for_rows(&load_labels(labels)?, x.nrows())?;
    let set = LabeledDataset::new(x, labels, cb.classes())?;
    let (model, history) = binhash::train::<f64>(&cfg, &set, &cb)?;
    for e in &history.epochs {
        println!(
            "epoch {:>4} loss {:.6} max|balance| {:.4}",
            e.epoch, e.mean_loss, e.max_abs_bit_balance
        );
    }
    write(out_model, io::encode_model(&model)?)?;
    write(out_history, io::canonical_json_pretty(&history)?)
}

fn encode(
    model: &Path,
    data: &Path,
    out_codes: &Path,
    recalibrate_with: Option<&Path>,
    out_continuous: Option<&Path>,
) -> Result<()> {
    let mut params: EncoderParams<f64> = load(model, io::decode_model)?;
    if let Some(path) = recalibrate_with {
        params = params.recalibrate_bn(load_descriptors(path)?.view())?;
    }
    let x = load_descriptors(data)?;
    let continuous = params.encode_continuous(x.view())?;
    let codes = continuous
        .rows()
        .into_iter()
        .map(|r| binhash::hamming::binarize_and_pack(r.as_slice().expect("standard layout")))
        .collect::<binhash::Result<Vec<_>>>()?;
    write(out_codes, io::encode_codes(&numbered(codes))?)?;
    if let Some(path) = out_continuous {
        write(path, io::encode_descriptors(continuous.view())?)?;
    }
    Ok(())
}

fn query(index: &Path, codes: &Path, top: usize, out: &Path) -> Result<()> {
    let index = load(index, io::decode_index)?;
    let codes = load(codes, io::decode_codes)?;
    let mut csv = String::from("query_id,rank,id,distance\n");
    for (qid, code) in &codes {
        for (rank, hit) in index.query_top_r(code, top)?.iter().enumerate() {
            writeln!(csv, "{qid},{},{},{}", rank + 1, hit.id, hit.distance).expect("write to string");
        }
    }
    write(out, csv)
}

fn evaluate(
    index: &Path,
    query_codes: &Path,
    db_labels: &Path,
    query_labels: &Path,
    r: usize,
    out_report: &Path,
) -> Result<()> {
    let index: HammingIndex = load(index, io::decode_index)?;
    let queries = load(query_codes, io::decode_codes)?;
    let db: HashMap<u64, Vec<usize>> = load_labels(db_labels)?.into_iter().collect();
    if let Some(id) = index.ids().iter().find(|id| !db.contains_key(id)) {
        bail!("no database label for id {id}");
    }
    let qmap: HashMap<u64, Vec<usize>> = load_labels(query_labels)?.into_iter().collect();
    let qlabels = queries
        .iter()
        .map(|(id, _)| {
            qmap.get(id)
                .cloned()
                .with_context(|| format!("no query label for id {id}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let qcodes: Vec<PackedCode> = queries.into_iter().map(|(_, c)| c).collect();
    let summary = evaluate_retrieval(&index, &qcodes, &qlabels, &db, r)?;
    println!(
        "mAP@{r} {:.6} over {} queries ({} skipped)",
        summary.map_at_r, summary.queries_evaluated, summary.queries_skipped
    );
    write(
        out_report,
        io::canonical_json_pretty(&EvalReport::from_retrieval(&summary))?,
    )
}

#[allow(clippy::too_many_arguments)]
fn analyze(
    codes: &Path,
    continuous: Option<&Path>,
    labels: &Path,
    bins: usize,
    classes: Option<usize>,
    out_report: &Path,
    out_histograms: Option<&Path>,
) -> Result<()> {
    let entries = load(codes, io::decode_codes)?;
    let lmap: HashMap<u64, Vec<usize>> = load_labels(labels)?.into_iter().collect();
    let labels = entries
        .iter()
        .map(|(id, _)| lmap.get(id).cloned().with_context(|| format!("no label for id {id}")))
        .collect::<Result<Vec<_>>>()?;
    let classes = match classes {
        Some(c) => c,
        None => labels.iter().flatten().max().map_or(0, |m| m + 1),
    };
    let codes: Vec<PackedCode> = entries.into_iter().map(|(_, c)| c).collect();
    let cont = continuous.map(load_descriptors).transpose()?;
    let report = EvalReport::analyze(&codes, &labels, classes, bins, cont.as_ref().map(|c| c.view()))?;
    if let Some(s) = report.separability {
        println!("separability {s:.4}");
    }
    write(out_report, io::canonical_json_pretty(&report)?)?;
    if let Some(path) = out_histograms {
        write(path, io::histogram_csv(&distance_histograms(&codes, &labels, bins)?))?;
    }
    Ok(())
}

fn roundtrip(input: &Path, out: &Path) -> Result<()> {
    if io::roundtrip_check(input, out).with_context(|| format!("round-tripping {}", input.display()))? {
        println!("identical");
        Ok(())
    } else {
        bail!("{} is not in canonical form", input.display())
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCodebook {
            classes,
            bits,
            method,
            seed,
            iterations,
            rows,
            out,
        } => gen_codebook(classes, bits, method, seed, iterations, rows, out.as_deref()),
        Command::MakeToy {
            classes,
            dim,
            per_class,
            spread,
            separation,
            seed,
            out_data,
            out_labels,
            multilabel,
            query_fraction,
            out_query_data,
            out_query_labels,
        } => {
            let cfg = ToyConfig {
                classes,
                dim,
                per_class,
                spread,
                separation,
                seed,
                multilabel,
            };
            let query_out = out_query_data.as_deref().zip(out_query_labels.as_deref());
            make_toy(cfg, &out_data, &out_labels, query_fraction, query_out)
        }
        Command::Train {
            data,
            labels,
            codebook,
            config,
            out_model,
            out_history,
        } => train(&data, &labels, &codebook, &config, &out_model, &out_history),
        Command::Encode {
            model,
            data,
            out_codes,
            recalibrate_with,
            out_continuous,
        } => encode(
            &model,
            &data,
            &out_codes,
            recalibrate_with.as_deref(),
            out_continuous.as_deref(),
        ),
        Command::Index { codes, out } => {
            let index = HammingIndex::build(load(&codes, io::decode_codes)?)?;
            write(&out, io::encode_index(&index)?)
        }
        Command::Query { index, codes, top, out } => query(&index, &codes, top, &out),
        Command::Evaluate {
            index,
            query_codes,
            db_labels,
            query_labels,
            r,
            out_report,
        } => evaluate(&index, &query_codes, &db_labels, &query_labels, r, &out_report),
        Command::Analyze {
            codes,
            continuous,
            labels,
            bins,
            classes,
            out_report,
            out_histograms,
        } => analyze(
            &codes,
            continuous.as_deref(),
            &labels,
            bins,
            classes,
            &out_report,
            out_histograms.as_deref(),
        ),
        Command::Roundtrip { input, out } => roundtrip(&input, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
