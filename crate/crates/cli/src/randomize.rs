use std::collections::BTreeMap;
use std::path::PathBuf;

use ldte::data::encode_labels;
use ldte::{assign, imbalance_report, CarScheme, ImbalanceRow, LdteError, SchemeKind, Targets};
use serde::Serialize;

use crate::args::{RandomizeArgs, SchemeArg};
use crate::output::{delimiter_byte, resolve_seed, sidecar, write_json, Meta};
use crate::CliError;

#[derive(Debug, Serialize)]
struct RandomizeConfig {
    input: PathBuf,
    stratum_col: String,
    assign_col: String,
    scheme: SchemeKind,
    target: Targets,
}

#[derive(Serialize)]
struct LabelledRow<'a> {
    stratum: &'a str,
    #[serde(flatten)]
    row: &'a ImbalanceRow,
}

#[derive(Serialize)]
struct RandomizeMeta<'a> {
    meta: Meta,
    imbalance: Vec<LabelledRow<'a>>,
}

fn parse_targets(raw: &str, labels: &[String]) -> Result<Targets, CliError> {
    if let Ok(p) = raw.trim().parse::<f64>() {
        return Ok(Targets::All(p));
    }
    let mut map = BTreeMap::new();
    for pair in raw.split(',') {
        let (label, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--target entry {pair:?} is not label=p")))?;
        let code = labels
            .iter()
            .position(|l| l == label.trim())
            .ok_or_else(|| CliError::Usage(format!("--target names unknown stratum {:?}", label.trim())))?;
        let p = value
            .trim()
            .parse::<f64>()
            .map_err(|_| CliError::Usage(format!("--target value {value:?} is not a number")))?;
        map.insert(code, p);
    }
    Ok(Targets::PerStratum(map))
}

fn scheme_kind(args: &RandomizeArgs) -> Result<SchemeKind, CliError> {
    Ok(match args.scheme {
        SchemeArg::Simple => SchemeKind::SimpleRandom,
        SchemeArg::Block => SchemeKind::StratifiedBlock {
            block_size: args
                .block_size
                .ok_or_else(|| CliError::Usage("--scheme block needs --block-size".into()))?,
        },
        SchemeArg::Efron => SchemeKind::EfronBiasedCoin { gamma: args.gamma },
        SchemeArg::Wei => SchemeKind::WeiAdaptive {
            strength: args.strength,
        },
    })
}

pub fn run(args: &RandomizeArgs) -> Result<(), CliError> {
    let delimiter = delimiter_byte(args.delimiter)?;
    let kind = scheme_kind(args)?;
    let mut reader = csv::ReaderBuilder::new().delimiter(delimiter).from_path(&args.input)?;
    let headers = reader.headers()?.clone();
    let column = headers
        .iter()
        .position(|h| h.trim() == args.stratum_col)
        .ok_or_else(|| LdteError::MissingColumn(args.stratum_col.clone()))?;
    if headers.iter().any(|h| h.trim() == args.assign_col) {
        return Err(CliError::Usage(format!("input already has a column named {:?}", args.assign_col)));
    }
    let records: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>()?;
    let raw: Vec<String> = records.iter().map(|r| r.get(column).unwrap_or("").trim().to_string()).collect();
    let (strata, labels) = encode_labels(&raw);

    let target = parse_targets(&args.target, &labels)?;
    let scheme = CarScheme::new(kind, target).map_err(|e| CliError::Usage(e.to_string()))?;
    let seed = resolve_seed(args.seed);
    let assignment = assign(&scheme, &strata, seed)?;
    let report = imbalance_report(&assignment, &strata, &scheme.target)?;

    let mut writer = csv::WriterBuilder::new().delimiter(delimiter).from_path(&args.output)?;
    let mut header = headers.clone();
    header.push_field(&args.assign_col);
    writer.write_record(&header)?;
    for (record, z) in records.iter().zip(&assignment) {
        let mut row = record.clone();
        row.push_field(&z.to_string());
        writer.write_record(&row)?;
    }
    writer.flush()?;

    let config = RandomizeConfig {
        input: args.input.clone(),
        stratum_col: args.stratum_col.clone(),
        assign_col: args.assign_col.clone(),
        scheme: scheme.kind.clone(),
        target: scheme.target.clone(),
    };
    let imbalance: Vec<LabelledRow> = report
        .iter()
        .map(|row| LabelledRow {
            stratum: &labels[row.stratum],
            row,
        })
        .collect();
    println!("{:<16} {:>8} {:>8} {:>10} {:>8} {:>11}", "stratum", "n", "treated", "share", "target", "deviation");
    for r in &imbalance {
        println!(
            "{:<16} {:>8} {:>8} {:>10.5} {:>8.3} {:>11.2e}",
            r.stratum, r.row.n, r.row.n_treated, r.row.pi_hat, r.row.target, r.row.deviation
        );
    }
    write_json(
        &sidecar(&args.output),
        &RandomizeMeta {
            meta: Meta::new("randomize", seed, &config)?,
            imbalance,
        },
    )
}
