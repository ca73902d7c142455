//! Command-line front end. Every subcommand parses flags, echoes its resolved
//! configuration as a `# config:` line, calls into the library and prints
//! results with 9 decimal places.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::corpus::load_corpus;
use crate::efm::{apply_mask, plan_mask, MaskRates, PhraseLexicon, DEFAULT_MASK_SYMBOL};
use crate::embed::{hu_normalize, read_embeddings, write_embeddings, EmbeddingMatrix, HuWindow};
use crate::error::{Error, Result};
use crate::labeler::{HealthPhrases, KeywordTable, Labeler, NegationRules, Pathology};
use crate::losses::{
    build_positive_sets_with, distill_loss, roco_loss_with, ContrastiveOptions, LossValue,
    PositiveSetMap, Reduction, DEFAULT_TEMPERATURE,
};
use crate::metrics::{eval_nlp, eval_reports, CIDER_SIGMA};
use crate::retrieval::{retrieve, zero_shot_probability, PromptPair};
use crate::toytrain::{
    ablation, gradcheck, make_synthetic, train, GradLoss, SyntheticSpec, TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ctalign", version, about = "CT report alignment toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Rank gallery rows by cosine similarity for every query row.
    Retrieve(RetrieveArgs),
    /// Presence probabilities from positive/negative prompt embeddings.
    Zeroshot(ZeroshotArgs),
    /// Robust contrastive loss over paired embeddings.
    Roco(RocoArgs),
    /// Dual distillation loss of a student against a frozen teacher.
    Distill(DistillArgs),
    /// Keyword pathology labels for every report.
    Label(LabelArgs),
    /// Healthy flags and false-negative positive sets for a corpus.
    Healthy(HealthyArgs),
    /// Entity-focused masking of every report.
    Mask(MaskArgs),
    /// Clinical efficacy: per-entity and macro precision/recall/F1.
    EvalReport(EvalReportArgs),
    /// BLEU-4, ROUGE-L, CIDEr-D and METEOR per report and on average.
    EvalNlp(EvalNlpArgs),
    /// Train the toy model on synthetic data and run the ablation.
    TrainToy(TrainToyArgs),
    /// Compare analytic loss gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Window and rescale Hounsfield units to [-1, 1].
    HuNormalize(HuNormalizeArgs),
    /// Print the shape and flags of an embedding file.
    EmbInfo(EmbInfoArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub gallery: PathBuf,
    /// Rows written per query, in rank order.
    #[arg(short, long, default_value_t = 1)]
    pub k: usize,
    /// TSV destination; defaults to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ZeroshotArgs {
    /// Image embeddings, one row per case.
    #[arg(long, required_unless_present = "print_prompts")]
    pub images: Option<PathBuf>,
    /// Prompt embeddings: rows 2e and 2e+1 are the positive and negative
    /// prompt of entity e.
    #[arg(long, required_unless_present = "print_prompts")]
    pub prompts: Option<PathBuf>,
    /// Comma-separated entity names, in prompt order.
    #[arg(long, value_delimiter = ',', default_values_t = Pathology::ALL.map(|p| p.display_name().to_string()))]
    pub entities: Vec<String>,
    #[arg(short, long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long, default_value_t = PromptPair::default().positive_template)]
    pub positive_template: String,
    #[arg(long, default_value_t = PromptPair::default().negative_template)]
    pub negative_template: String,
    /// Print the rendered prompt texts and exit.
    #[arg(long)]
    pub print_prompts: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct RocoArgs {
    #[arg(long)]
    pub img: PathBuf,
    #[arg(long)]
    pub txt: PathBuf,
    /// JSON list of positive index lists, one per row. Defaults to singletons.
    #[arg(long, conflicts_with = "corpus")]
    pub positives: Option<PathBuf>,
    /// Report corpus aligned with the rows; positive sets are derived from it.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(short, long, default_value_t = DEFAULT_TEMPERATURE)]
    pub t: f64,
    /// Average the image-to-text and text-to-image directions.
    #[arg(long)]
    pub symmetric: bool,
    #[arg(long)]
    pub grad_img_out: Option<PathBuf>,
    #[arg(long)]
    pub grad_txt_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DistillArgs {
    #[arg(long)]
    pub student: PathBuf,
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long, default_value_t = Reduction::Sum)]
    pub reduction: Reduction,
    #[arg(long)]
    pub grad_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct LabelArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// JSON keyword table overriding the built-in one.
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    /// JSON negation rules overriding the built-in ones.
    #[arg(long)]
    pub negation: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct HealthyArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Where to write the positive sets as JSON.
    #[arg(long)]
    pub positives_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MaskArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// JSON phrase lexicon overriding the built-in one.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Base seed; record i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = MaskRates::default().entity_rate)]
    pub entity_rate: f64,
    #[arg(long, default_value_t = MaskRates::default().random_rate)]
    pub random_rate: f64,
    #[arg(long, default_value_t = MaskRates::default().max_mask_fraction)]
    pub max_fraction: f64,
    #[arg(long, default_value = DEFAULT_MASK_SYMBOL)]
    pub mask_symbol: String,
    /// Masked token lines, one per report.
    #[arg(long)]
    pub out: PathBuf,
    /// JSONL plan sidecar; defaults to `<out>.plan.jsonl`.
    #[arg(long)]
    pub plan_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Tsv,
    Text,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalReportArgs {
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TableFormat::Tsv)]
    pub format: TableFormat,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalNlpArgs {
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainToyArgs {
    /// JSON file with optional `data`, `train`, `ablation` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, value_parser = ["roco", "infonce", "distill"])]
    pub loss: String,
    #[arg(long, default_value_t = 8)]
    pub rows: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Instances checked, with seeds seed..seed+trials.
    #[arg(long, default_value_t = 1)]
    pub trials: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct HuNormalizeArgs {
    #[arg(long, default_value_t = HuWindow::default().low(), allow_negative_numbers = true)]
    pub low: f64,
    #[arg(long, default_value_t = HuWindow::default().high(), allow_negative_numbers = true)]
    pub high: f64,
    /// File with one value per line, instead of positional values.
    #[arg(long, conflicts_with = "values")]
    pub input: Option<PathBuf>,
    #[arg(allow_negative_numbers = true)]
    pub values: Vec<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct EmbInfoArgs {
    pub file: PathBuf,
}

/// Toy training configuration file layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub data: SyntheticSpec,
    pub train: TrainConfig,
    pub ablation: AblationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub enabled: bool,
    pub seeds: Vec<u64>,
    pub data: SyntheticSpec,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            seeds: (0..5).collect(),
            data: SyntheticSpec::ablation_default(),
        }
    }
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) => Failure::Usage(m),
            other => Failure::Data(other),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (including the program name) and runs the subcommand,
/// returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    EXIT_USAGE
                }
            };
        }
    };
    let result = echo_config(&cli.command, out)
        .map_err(Failure::from)
        .and_then(|()| dispatch(&cli.command, out));
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DATA
        }
    }
}

fn echo_config(cmd: &Command, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "# config: {}", serde_json::to_string(cmd)?)?;
    Ok(())
}

fn dispatch(cmd: &Command, out: &mut dyn Write) -> CmdResult {
    match cmd {
        Command::Retrieve(a) => cmd_retrieve(a, out),
        Command::Zeroshot(a) => cmd_zeroshot(a, out),
        Command::Roco(a) => cmd_roco(a, out),
        Command::Distill(a) => cmd_distill(a, out),
        Command::Label(a) => cmd_label(a, out),
        Command::Healthy(a) => cmd_healthy(a, out),
        Command::Mask(a) => cmd_mask(a, out),
        Command::EvalReport(a) => cmd_eval_report(a, out),
        Command::EvalNlp(a) => cmd_eval_nlp(a, out),
        Command::TrainToy(a) => cmd_train_toy(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::HuNormalize(a) => cmd_hu_normalize(a, out),
        Command::EmbInfo(a) => cmd_emb_info(a, out),
    }
}

fn num(v: f64) -> String {
    format!("{v:.9}")
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).at_path(path))?;
    serde_json::from_str(&text).map_err(|e| Error::from(e).at_path(path))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::from(e).at_path(path))
}

/// Writes to `path` when given, otherwise to `out`.
fn with_sink(
    path: Option<&Path>,
    out: &mut dyn Write,
    body: impl FnOnce(&mut dyn Write) -> Result<()>,
) -> Result<()> {
    match path {
        Some(p) => {
            let mut f = std::io::BufWriter::new(create(p)?);
            body(&mut f)?;
            f.flush().map_err(|e| Error::from(e).at_path(p))
        }
        None => body(out),
    }
}

fn cmd_retrieve(a: &RetrieveArgs, out: &mut dyn Write) -> CmdResult {
    let queries = read_embeddings(&a.queries)?;
    let gallery = read_embeddings(&a.gallery)?;
    let results = retrieve(&queries, &gallery, a.k)?;
    with_sink(a.out.as_deref(), out, |w| {
        writeln!(w, "query_index\tmatched_index\tscore")?;
        for r in &results {
            for &(j, s) in &r.top_k {
                writeln!(w, "{}\t{}\t{}", r.query_index, j, num(s))?;
            }
        }
        Ok(())
    })?;
    Ok(())
}

fn cmd_zeroshot(a: &ZeroshotArgs, out: &mut dyn Write) -> CmdResult {
    let pair = PromptPair::new(a.positive_template.clone(), a.negative_template.clone())?;
    if a.print_prompts {
        writeln!(out, "entity\tpositive\tnegative")?;
        for e in &a.entities {
            let (p, n) = pair.render(e)?;
            writeln!(out, "{e}\t{p}\t{n}")?;
        }
        return Ok(());
    }
    let (Some(images), Some(prompts)) = (&a.images, &a.prompts) else {
        return Err(Failure::Usage("--images and --prompts are required".into()));
    };
    let images = read_embeddings(images)?;
    let prompts = read_embeddings(prompts)?;
    if prompts.rows() != 2 * a.entities.len() {
        return Err(Error::DimMismatch {
            context: "prompt rows vs 2 x entities",
            left: prompts.rows(),
            right: 2 * a.entities.len(),
        }
        .into());
    }
    if prompts.dim() != images.dim() {
        return Err(Error::DimMismatch {
            context: "prompt vs image dim",
            left: prompts.dim(),
            right: images.dim(),
        }
        .into());
    }
    writeln!(out, "image_index\tentity\tprobability")?;
    for (i, img) in images.iter_rows().enumerate() {
        for (e, name) in a.entities.iter().enumerate() {
            let p = zero_shot_probability(img, prompts.row(2 * e), prompts.row(2 * e + 1), a.t)?;
            writeln!(out, "{i}\t{name}\t{}", num(p))?;
        }
    }
    Ok(())
}

fn print_loss(out: &mut dyn Write, loss: &LossValue) -> Result<()> {
    writeln!(out, "loss\t{}", num(loss.value))?;
    for term in &loss.terms {
        writeln!(out, "{}\t{}", term.name, num(term.value))?;
    }
    Ok(())
}

fn cmd_roco(a: &RocoArgs, out: &mut dyn Write) -> CmdResult {
    let img = read_embeddings(&a.img)?;
    let txt = read_embeddings(&a.txt)?;
    let positives = match (&a.positives, &a.corpus) {
        (Some(p), _) => read_json::<PositiveSetMap>(p)?,
        (None, Some(c)) => {
            let corpus = load_corpus(c)?;
            build_positive_sets_with(corpus.records(), &HealthPhrases::default())
        }
        (None, None) => PositiveSetMap::singletons(img.rows()),
    };
    let loss = roco_loss_with(
        &img,
        &txt,
        &positives,
        &ContrastiveOptions {
            temperature: a.t,
            symmetric: a.symmetric,
        },
    )?;
    print_loss(out, &loss)?;
    if let Some(p) = &a.grad_img_out {
        write_embeddings(loss.grad(0), p)?;
    }
    if let Some(p) = &a.grad_txt_out {
        write_embeddings(loss.grad(1), p)?;
    }
    Ok(())
}

fn cmd_distill(a: &DistillArgs, out: &mut dyn Write) -> CmdResult {
    let student = read_embeddings(&a.student)?;
    let teacher = read_embeddings(&a.teacher)?;
    let loss = distill_loss(&student, &teacher, a.reduction)?;
    print_loss(out, &loss)?;
    if let Some(p) = &a.grad_out {
        write_embeddings(loss.grad(0), p)?;
    }
    Ok(())
}

fn cmd_label(a: &LabelArgs, out: &mut dyn Write) -> CmdResult {
    let corpus = load_corpus(&a.corpus)?;
    let mut labeler = Labeler::default();
    if let Some(p) = &a.keywords {
        labeler.keywords = KeywordTable::load(p)?;
    }
    if let Some(p) = &a.negation {
        labeler.negation = NegationRules::load(p)?;
    }
    write!(out, "id")?;
    for p in Pathology::ALL {
        write!(out, "\t{}", p.name())?;
    }
    writeln!(out)?;
    for r in corpus.iter() {
        let labels = labeler.extract(r);
        write!(out, "{}", r.id)?;
        for present in labels.as_array() {
            write!(out, "\t{}", u8::from(present))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn cmd_healthy(a: &HealthyArgs, out: &mut dyn Write) -> CmdResult {
    let corpus = load_corpus(&a.corpus)?;
    let labeler = Labeler::default();
    writeln!(out, "id\thealthy")?;
    for r in corpus.iter() {
        writeln!(out, "{}\t{}", r.id, u8::from(labeler.is_healthy(r)))?;
    }
    if let Some(p) = &a.positives_out {
        let sets = build_positive_sets_with(corpus.records(), &labeler.health);
        let mut f = create(p)?;
        serde_json::to_writer(&mut f, sets.sets()).map_err(|e| Error::from(e).at_path(p))?;
        writeln!(f).map_err(|e| Error::from(e).at_path(p))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PlanLine<'a> {
    id: &'a str,
    plan: &'a crate::efm::MaskPlan,
}

fn cmd_mask(a: &MaskArgs, out: &mut dyn Write) -> CmdResult {
    let corpus = load_corpus(&a.corpus)?;
    let lexicon = match &a.lexicon {
        Some(p) => PhraseLexicon::load(p)?,
        None => PhraseLexicon::default(),
    };
    let rates = MaskRates {
        entity_rate: a.entity_rate,
        random_rate: a.random_rate,
        max_mask_fraction: a.max_fraction,
    };
    rates.validate()?;
    let plan_path = a.plan_out.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".plan.jsonl");
        PathBuf::from(s)
    });
    let mut masked_lines = String::new();
    let mut plan_lines = String::new();
    let (mut total, mut masked) = (0usize, 0usize);
    for (i, r) in corpus.iter().enumerate() {
        let tokens = r.token_texts();
        let plan = plan_mask(&tokens, &lexicon, &rates, a.seed.wrapping_add(i as u64))?;
        masked_lines.push_str(&apply_mask(&tokens, &plan, &a.mask_symbol)?.join(" "));
        masked_lines.push('\n');
        plan_lines.push_str(&serde_json::to_string(&PlanLine {
            id: &r.id,
            plan: &plan,
        })?);
        plan_lines.push('\n');
        total += plan.token_count;
        masked += plan.masked_count();
    }
    fs::write(&a.out, masked_lines).map_err(|e| Error::from(e).at_path(&a.out))?;
    fs::write(&plan_path, plan_lines).map_err(|e| Error::from(e).at_path(&plan_path))?;
    writeln!(out, "reports\t{}", corpus.len())?;
    writeln!(out, "tokens\t{total}")?;
    writeln!(out, "masked\t{masked}")?;
    writeln!(out, "plan\t{}", plan_path.display())?;
    Ok(())
}

fn cmd_eval_report(a: &EvalReportArgs, out: &mut dyn Write) -> CmdResult {
    let generated = load_corpus(&a.generated)?;
    let reference = load_corpus(&a.reference)?;
    let labeler = match &a.keywords {
        Some(p) => Labeler::new(KeywordTable::load(p)?),
        None => Labeler::default(),
    };
    let eval = eval_reports(&generated, &reference, &labeler)?;
    let report = &eval.report;
    match a.format {
        TableFormat::Tsv => {
            writeln!(out, "entity\ttp\tfp\tfn\ttn\tprecision\trecall\tf1")?;
            for e in &report.entities {
                let c = e.counts;
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    e.entity.name(),
                    c.tp,
                    c.fp,
                    c.fn_,
                    c.tn,
                    num(e.scores.precision),
                    num(e.scores.recall),
                    num(e.scores.f1)
                )?;
            }
            writeln!(
                out,
                "macro\t\t\t\t\t{}\t{}\t{}",
                num(report.macro_precision),
                num(report.macro_recall),
                num(report.macro_f1)
            )?;
        }
        TableFormat::Text => {
            writeln!(
                out,
                "{:<18} {:>12} {:>12} {:>12}",
                "entity", "precision", "recall", "f1"
            )?;
            for e in &report.entities {
                let flag = if e.scores.f1_undefined {
                    " (undefined, scored 0)"
                } else {
                    ""
                };
                writeln!(
                    out,
                    "{:<18} {:>12} {:>12} {:>12}{flag}",
                    e.entity.display_name(),
                    num(e.scores.precision),
                    num(e.scores.recall),
                    num(e.scores.f1)
                )?;
            }
            writeln!(
                out,
                "{:<18} {:>12} {:>12} {:>12}",
                "macro average",
                num(report.macro_precision),
                num(report.macro_recall),
                num(report.macro_f1)
            )?;
        }
    }
    Ok(())
}

fn cmd_eval_nlp(a: &EvalNlpArgs, out: &mut dyn Write) -> CmdResult {
    let generated = load_corpus(&a.generated)?;
    let reference = load_corpus(&a.reference)?;
    let eval = eval_nlp(&generated, &reference)?;
    writeln!(
        out,
        "# cider_d: CIDEr-D, n=1..4, sigma {CIDER_SIGMA}, scaled by 10, document frequencies from the reference corpus"
    )?;
    writeln!(out, "id\tbleu4\trouge_l\tcider_d\tmeteor")?;
    let row = |out: &mut dyn Write, id: &str, s: &crate::metrics::NlpScores| -> Result<()> {
        writeln!(
            out,
            "{id}\t{}\t{}\t{}\t{}",
            num(s.bleu4),
            num(s.rouge_l),
            num(s.cider),
            num(s.meteor)
        )?;
        Ok(())
    };
    for (id, s) in &eval.per_report {
        row(out, id, s)?;
    }
    row(out, "mean", &eval.mean)?;
    Ok(())
}

fn write_tsv_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::from(e).at_path(path))
}

fn cmd_train_toy(a: &TrainToyArgs, out: &mut dyn Write) -> CmdResult {
    let config: ToyConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ToyConfig::default(),
    };
    let config_json = serde_json::to_string_pretty(&config)?;
    writeln!(out, "# resolved: {}", serde_json::to_string(&config)?)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::from(e).at_path(&a.out))?;
    write_tsv_file(&a.out.join("config.json"), &(config_json + "\n"))?;

    let data = make_synthetic(&config.data)?;
    let outcome = train(&data, &config.train)?;
    let mut trace = String::from("epoch\tcontrastive\tdistill\ttotal\n");
    for e in &outcome.trace {
        trace.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            e.epoch,
            num(e.contrastive),
            num(e.distill),
            num(e.total)
        ));
    }
    write_tsv_file(&a.out.join("loss.tsv"), &trace)?;
    write_embeddings(
        &outcome.image_embeddings,
        a.out.join("image_embeddings.emb"),
    )?;
    write_embeddings(&outcome.text_embeddings, a.out.join("text_embeddings.emb"))?;
    write_embeddings(&outcome.teacher, a.out.join("teacher_embeddings.emb"))?;

    let s = &outcome.summary;
    writeln!(out, "contrastive_initial\t{}", num(s.contrastive_initial))?;
    writeln!(out, "contrastive_final\t{}", num(s.contrastive_final))?;
    writeln!(out, "grouped_recall_at_1\t{}", num(s.grouped_recall_at_1))?;
    writeln!(
        out,
        "relation_distance_initial\t{}",
        num(s.relation_distance_initial)
    )?;
    writeln!(
        out,
        "relation_distance_final\t{}",
        num(s.relation_distance_final)
    )?;

    if config.ablation.enabled {
        let summary = ablation(&config.ablation.data, &config.train, &config.ablation.seeds)?;
        let mut table = String::from("seed\trecall_roco\trecall_infonce\tmargin\n");
        for r in &summary.runs {
            table.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.seed,
                num(r.recall_roco),
                num(r.recall_infonce),
                num(r.recall_roco - r.recall_infonce)
            ));
        }
        write_tsv_file(&a.out.join("ablation.tsv"), &table)?;
        writeln!(
            out,
            "ablation_wins\t{}/{}",
            summary.wins,
            summary.runs.len()
        )?;
        writeln!(out, "ablation_mean_margin\t{}", num(summary.mean_margin))?;
    }
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> CmdResult {
    let loss: GradLoss = a.loss.parse()?;
    if a.trials == 0 {
        return Err(Failure::Usage("--trials must be at least 1".into()));
    }
    writeln!(out, "seed\tmax_relative_error")?;
    let mut worst: f64 = 0.0;
    for seed in a.seed..a.seed.saturating_add(a.trials) {
        let r = gradcheck(loss, a.rows, a.dim, seed)?;
        worst = worst.max(r.max_relative_error);
        writeln!(out, "{seed}\t{}", num(r.max_relative_error))?;
    }
    writeln!(out, "max\t{}", num(worst))?;
    Ok(())
}

fn cmd_hu_normalize(a: &HuNormalizeArgs, out: &mut dyn Write) -> CmdResult {
    let window = HuWindow::new(a.low, a.high)?;
    let values: Vec<f64> = match &a.input {
        Some(p) => {
            let f = fs::File::open(p).map_err(|e| Error::from(e).at_path(p))?;
            let mut vals = Vec::new();
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::from(e).at_path(p))?;
                let t = line.trim();
                if t.is_empty() {
                    continue;
                }
                let v = t.parse::<f64>().map_err(|e| {
                    Error::MalformedLine {
                        line: i + 1,
                        message: format!("{t:?}: {e}"),
                    }
                    .at_path(p)
                })?;
                vals.push(v);
            }
            vals
        }
        None => a.values.clone(),
    };
    for v in values {
        writeln!(out, "{}", num(hu_normalize(v, &window)))?;
    }
    Ok(())
}

fn cmd_emb_info(a: &EmbInfoArgs, out: &mut dyn Write) -> CmdResult {
    let m: EmbeddingMatrix = read_embeddings(&a.file)?;
    writeln!(out, "rows\t{}", m.rows())?;
    writeln!(out, "dim\t{}", m.dim())?;
    writeln!(out, "normalized\t{}", m.is_normalized())?;
    Ok(())
}
