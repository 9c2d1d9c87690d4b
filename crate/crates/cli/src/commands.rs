use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use samlm_core::corpus::{self, AttributeInventory, AttributeVocab, Document, Format, IndexedDocument, EOS, UNK_TOKEN};
use samlm_core::eval::{self, DeltaThresholds, PerplexityReport, TokenScorer};
use samlm_core::genapp::{export_attention, GenRequest, GenResult, Generator};
use samlm_core::lda::{topic_label, TopicModel};
use samlm_core::model::{gradcheck_model, ModelConfig, SamModel, Variant};
use samlm_core::ngram::NgramModel;
use samlm_core::trainer::{self, RunDir};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{read_split, Dataset, SPLITS};
use crate::{Cli, Command, DataArg, Dims, GenArgs};

struct Ctx {
    cfg: RunConfig,
}

impl Ctx {
    fn data_dir(&self, arg: &DataArg) -> Result<PathBuf> {
        match &arg.data {
            Some(d) => Ok(d.clone()),
            None => Ok(self.cfg.data_dir()?.to_path_buf()),
        }
    }

    fn out_dir(&self) -> Result<&Path> {
        let out = self.cfg.out.as_path();
        fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
        Ok(out)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    cfg.propagate_seed();
    let mut ctx = Ctx { cfg };
    match cli.command {
        Command::Ingest(a) => ingest(&mut ctx, a),
        Command::LdaLabel(a) => lda_label(&mut ctx, a),
        Command::Train(a) => train(&mut ctx, a),
        Command::Eval(a) => evaluate(&ctx, a),
        Command::WordDelta(a) => word_delta(&ctx, a),
        Command::Ngram(a) => ngram(&mut ctx, a),
        Command::Generate(a) => generate(&ctx, a),
        Command::Vary(a) => vary(&ctx, a),
        Command::ExportAttn(a) => export_attn(&ctx, a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn ingest(ctx: &mut Ctx, a: crate::IngestArgs) -> Result<()> {
    let c = &mut ctx.cfg.corpus;
    if let Some(v) = a.vocab_size {
        c.vocab_size = v;
    }
    if let Some(m) = a.min_count {
        c.min_count = m;
    }
    if let Some(r) = a.ratios {
        c.ratios = (r[0], r[1], r[2]);
    }
    let read = |p: &Path| corpus::ingest(p, Format::Jsonl).with_context(|| format!("reading {}", p.display()));
    let docs = read(&a.input)?;
    let (train, valid, test) = match (&a.valid, &a.test) {
        (Some(v), Some(t)) => (docs, read(v)?, read(t)?),
        _ => corpus::split(&docs, ctx.cfg.corpus.ratios, ctx.cfg.seed)?,
    };
    let vocab = corpus::build_vocab(&train, ctx.cfg.corpus.vocab_size, ctx.cfg.corpus.min_count)?;
    let ds = Dataset {
        vocab,
        attrs: AttributeInventory::build(&train),
    };
    let out = ctx.out_dir()?;
    for (name, docs) in SPLITS.iter().zip([&train, &valid, &test]) {
        corpus::write_jsonl(&out.join(format!("{name}.jsonl")), docs)?;
    }
    ds.save(out)?;
    println!(
        "{} train / {} valid / {} test documents, {} vocabulary entries, {} authors, {} categories -> {}",
        train.len(),
        valid.len(),
        test.len(),
        ds.vocab.len(),
        ds.attrs.authors.len() - 1,
        ds.attrs.categories.len() - 1,
        out.display()
    );
    Ok(())
}

fn lda_label(ctx: &mut Ctx, a: crate::LdaArgs) -> Result<()> {
    let dir = ctx.data_dir(&a.data)?;
    let lda = &mut ctx.cfg.lda;
    if let Some(k) = a.topics {
        lda.n_topics = k;
    }
    if let Some(i) = a.iterations {
        lda.iterations = i;
    }
    if a.alpha.is_some() {
        lda.alpha = a.alpha;
    }
    if let Some(b) = a.beta {
        lda.beta = b;
    }
    let ds = Dataset::load(&dir)?;
    let splits: Vec<Vec<Document>> = SPLITS.iter().map(|s| read_split(&dir, s)).collect::<Result<_>>()?;
    let all: Vec<IndexedDocument> = splits.iter().flat_map(|d| ds.index(d)).collect();
    let model = TopicModel::fit(&all, ds.vocab.len(), &ctx.cfg.lda)?;
    let mut labels = model.assign_categories().into_iter();
    let out = ctx.out_dir()?;
    for (name, docs) in SPLITS.iter().zip(splits) {
        let labelled: Vec<Document> = docs
            .into_iter()
            .map(|mut d| {
                d.category = Some(topic_label(labels.next().expect("one label per document")));
                d
            })
            .collect();
        corpus::write_jsonl(&out.join(format!("{name}.jsonl")), &labelled)?;
    }
    let categories: Vec<String> = std::iter::once(UNK_TOKEN.to_string()).chain((0..model.n_topics()).map(topic_label)).collect();
    let labelled = Dataset {
        vocab: ds.vocab,
        attrs: AttributeInventory {
            authors: ds.attrs.authors,
            categories: AttributeVocab::from_names(categories)?,
        },
    };
    labelled.save(out)?;
    let report = model.render_top_words(&labelled.vocab, a.top);
    fs::write(out.join("top_words.txt"), &report)?;
    print!("{report}");
    Ok(())
}

fn train(ctx: &mut Ctx, a: crate::TrainArgs) -> Result<()> {
    let dir = ctx.data_dir(&a.data)?;
    let (m, t) = (&mut ctx.cfg.model, &mut ctx.cfg.train);
    if let Some(v) = a.variant {
        m.variant = v;
    }
    if let Some(h) = a.hidden {
        m.hidden = h;
    }
    if a.attr_dim.is_some() {
        m.attr_dim = a.attr_dim;
    }
    if let Some(x) = a.lr {
        t.lr = x;
    }
    if let Some(x) = a.batch_size {
        t.batch_size = x;
    }
    if let Some(x) = a.max_epochs {
        t.max_epochs = x;
    }
    if let Some(x) = a.patience {
        t.patience = x;
    }
    if a.clip_norm.is_some() {
        t.clip_norm = a.clip_norm;
    }
    if a.no_clip {
        t.clip_norm = None;
    }
    let ds = Dataset::load(&dir)?;
    let tr = ds.index(&read_split(&dir, "train")?);
    let va = ds.index(&read_split(&dir, "valid")?);
    let m = &ctx.cfg.model;
    let model = SamModel::build(ModelConfig {
        variant: m.variant,
        hidden: m.hidden,
        attr_dim: m.attr_dim.unwrap_or(m.hidden),
        vocab_size: ds.vocab.len(),
        n_authors: ds.attrs.authors.len(),
        n_categories: ds.attrs.categories.len(),
        seed: ctx.cfg.seed,
    })?;
    let out = ctx.out_dir()?.to_path_buf();
    let result = trainer::train(model, &tr, &va, &ctx.cfg.train, &RunDir(Some(out.clone())))?;
    println!(
        "{}: best epoch {} of {}, valid ppl {:.4}; checkpoints in {}",
        m.variant,
        result.best_epoch,
        result.history.len(),
        result.best_valid_ppl(),
        out.display()
    );
    Ok(())
}

/// A checkpoint file or an n-gram directory.
enum AnyModel {
    Neural(SamModel),
    Ngram(NgramModel),
}

impl AnyModel {
    fn load(path: &Path) -> Result<Self> {
        if path.is_dir() {
            Ok(AnyModel::Ngram(NgramModel::load(path).with_context(|| format!("loading n-gram model {}", path.display()))?))
        } else {
            Ok(AnyModel::Neural(SamModel::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?))
        }
    }

    fn scorer(&self) -> &dyn TokenScorer {
        match self {
            AnyModel::Neural(m) => m,
            AnyModel::Ngram(m) => m,
        }
    }
}

fn model_id(path: &Path) -> String {
    path.display().to_string()
}

fn check_vocab(scorer: &dyn TokenScorer, ds: &Dataset) -> Result<()> {
    if scorer.vocab_size() != ds.vocab.len() {
        bail!(samlm_core::Error::VocabMismatch(format!(
            "model covers {} tokens but the data vocabulary has {}",
            scorer.vocab_size(),
            ds.vocab.len()
        )));
    }
    Ok(())
}

fn evaluate(ctx: &Ctx, a: crate::EvalArgs) -> Result<()> {
    let dir = ctx.data_dir(&a.data)?;
    let ds = Dataset::load(&dir)?;
    let docs = ds.index(&read_split(&dir, &a.split)?);
    let model = AnyModel::load(&a.model)?;
    check_vocab(model.scorer(), &ds)?;
    let report = eval::perplexity(model.scorer(), &docs)?.with_ids(model_id(&a.model), &a.split);
    let out = ctx.out_dir()?;
    let p = out.join(format!("eval-{}.csv", a.split));
    report.write_csv(fs::File::create(&p)?)?;
    print!("{report}");
    Ok(())
}

fn word_delta(ctx: &Ctx, a: crate::WordDeltaArgs) -> Result<()> {
    let dir = ctx.data_dir(&a.data)?;
    let ds = Dataset::load(&dir)?;
    let docs = ds.index(&read_split(&dir, &a.split)?);
    let (ma, mb) = (AnyModel::load(&a.model_a)?, AnyModel::load(&a.model_b)?);
    let thresholds = DeltaThresholds {
        delta: a.delta,
        min_count: a.min_count,
    };
    let report = eval::word_delta(ma.scorer(), mb.scorer(), &docs, &ds.vocab, Some(&ds.attrs.categories), thresholds)?;
    let out = ctx.out_dir()?;
    report.write_csv(fs::File::create(out.join("word_delta.csv"))?)?;
    print!("{}", report.render(a.top));
    Ok(())
}

fn ngram(ctx: &mut Ctx, a: crate::NgramArgs) -> Result<()> {
    let dir = ctx.data_dir(&a.data)?;
    if let Some(o) = a.order {
        ctx.cfg.ngram_order = o;
    }
    let ds = Dataset::load(&dir)?;
    let tr = ds.index(&read_split(&dir, "train")?);
    let model = NgramModel::fit(&tr, ctx.cfg.ngram_order, ds.vocab.len())?;
    let out = ctx.out_dir()?;
    let model_dir = out.join("ngram");
    model.save(&model_dir)?;
    let mut csv = String::from(PerplexityReport::CSV_HEADER);
    csv.push('\n');
    for split in ["valid", "test"] {
        let docs = ds.index(&read_split(&dir, split)?);
        let r = eval::perplexity(&model, &docs)?.with_ids(format!("{}-gram", model.order()), split);
        csv.push_str(&r.csv_row());
        csv.push('\n');
        println!("{split}: perplexity {:.4} over {} tokens", r.perplexity, r.tokens);
    }
    fs::write(out.join("ngram_eval.csv"), csv)?;
    println!("discounts {:?}; model in {}", model.discounts(), model_dir.display());
    Ok(())
}

fn read_title(g: &GenArgs) -> Result<Option<Vec<String>>> {
    let text = match (&g.title, &g.title_text) {
        (Some(p), _) => fs::read_to_string(p).with_context(|| format!("reading title {}", p.display()))?,
        (None, Some(t)) => t.clone(),
        (None, None) => return Ok(None),
    };
    let words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    if words.is_empty() {
        bail!("the title is empty");
    }
    Ok(Some(words))
}

fn request(g: &GenArgs, seed: u64) -> Result<GenRequest> {
    Ok(GenRequest {
        title: read_title(g)?,
        author: None,
        category: g.category.clone(),
        max_len: g.max_len,
        temperature: g.temperature,
        strategy: g.strategy.into(),
        seed,
    })
}

fn load_neural(path: &Path) -> Result<SamModel> {
    SamModel::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

/// Attention CSV next to the JSON, if the variant produced a trace.
fn save_trace(result: &GenResult, path: PathBuf) -> Result<Option<PathBuf>> {
    if result.trace.is_empty() {
        return Ok(None);
    }
    export_attention(result, &path)?;
    Ok(Some(path))
}

fn report_warnings(r: &GenResult) {
    for w in &r.warnings {
        log::warn!("{w}");
    }
}

fn generate(ctx: &Ctx, a: crate::GenerateArgs) -> Result<()> {
    let dir = ctx.data_dir(&a.data)?;
    let ds = Dataset::load(&dir)?;
    let model = load_neural(&a.gen.model)?;
    let g = Generator::new(&model, &ds.vocab, &ds.attrs)?;
    let mut req = request(&a.gen, ctx.cfg.seed)?;
    req.author = a.author;
    let result = g.generate(&req)?;
    report_warnings(&result);
    let out = ctx.out_dir()?;
    let csv = save_trace(&result, out.join("attention.csv"))?;
    write_json(&out.join("generation.json"), &result.to_json(csv.as_deref()))?;
    println!("{}", result.text());
    Ok(())
}

fn find_doc(dir: &Path, split: &str, id: &str) -> Result<Document> {
    read_split(dir, split)?
        .into_iter()
        .find(|d| d.id == id)
        .with_context(|| format!("no document {id:?} in the {split} split"))
}

fn vary(ctx: &Ctx, a: crate::VaryArgs) -> Result<()> {
    let dir = ctx.data_dir(&a.data)?;
    let ds = Dataset::load(&dir)?;
    let model = load_neural(&a.gen.model)?;
    let g = Generator::new(&model, &ds.vocab, &ds.attrs)?;
    let mut req = request(&a.gen, ctx.cfg.seed)?;
    let mut original_author = a.from_author.clone();
    if let Some(id) = &a.doc {
        let d = find_doc(&dir, &a.split, id)?;
        req.title = req.title.or(d.title);
        req.category = req.category.or(d.category);
        original_author = original_author.or(d.author);
    }
    req.author = Some(original_author.unwrap_or_else(|| {
        log::warn!("no original author given; the original uses the unknown-author embedding");
        UNK_TOKEN.to_string()
    }));
    let v = g.style_variation(&req, &a.author)?;
    report_warnings(&v.original);
    report_warnings(&v.varied);
    let out = ctx.out_dir()?;
    let oc = save_trace(&v.original, out.join("original_attention.csv"))?;
    let vc = save_trace(&v.varied, out.join("varied_attention.csv"))?;
    #[derive(Serialize)]
    struct VaryJson<'a> {
        original: samlm_core::genapp::GenResultJson<'a>,
        varied: samlm_core::genapp::GenResultJson<'a>,
        divergence: f64,
        token_overlap: f64,
    }
    write_json(
        &out.join("variation.json"),
        &VaryJson {
            original: v.original.to_json(oc.as_deref()),
            varied: v.varied.to_json(vc.as_deref()),
            divergence: v.divergence,
            token_overlap: v.token_overlap,
        },
    )?;
    println!("original ({}): {}", req.author.as_deref().unwrap_or(""), v.original.text());
    println!("varied   ({}): {}", a.author, v.varied.text());
    println!("divergence {:.4}, token overlap {:.3}", v.divergence, v.token_overlap);
    Ok(())
}

fn export_attn(ctx: &Ctx, a: crate::ExportArgs) -> Result<()> {
    let dir = ctx.data_dir(&a.data)?;
    let ds = Dataset::load(&dir)?;
    let model = load_neural(&a.model)?;
    let doc = find_doc(&dir, &a.split, &a.doc)?;
    let idx = corpus::index_document(&doc, &ds.vocab, &ds.attrs);
    let pass = model.forward_document(&idx)?;
    if pass.trace.is_empty() {
        bail!("{} has no attention to export", model.config().variant);
    }
    let title: Vec<String> = if pass.trace.alpha.is_empty() {
        Vec::new()
    } else {
        idx.title_ids.iter().flatten().map(|&t| ds.vocab.token(t).to_string()).collect()
    };
    let text: Vec<String> = idx.text_ids.iter().map(|&t| ds.vocab.token(t).to_string()).collect();
    let out = ctx.out_dir()?;
    let p = out.join("attention.csv");
    pass.trace.save_csv(&p, &title, &text)?;
    println!("{}", p.display());
    Ok(())
}

fn gradcheck(a: crate::GradcheckArgs) -> Result<()> {
    let (d, da, v, title, len) = match a.dims {
        Dims::Tiny => (4, 3, 7, 2, 3),
        Dims::Small => (8, 6, 12, 3, 5),
    };
    let mut text_ids: Vec<usize> = (0..len - 1).map(|i| 3 + i % (v - 3)).collect();
    text_ids.push(EOS);
    let doc = IndexedDocument {
        id: "gradcheck".into(),
        text_ids,
        title_ids: Some((0..title).map(|i| 3 + (i + 1) % (v - 3)).collect()),
        author_id: Some(1),
        category_id: Some(1),
    };
    let variants: Vec<Variant> = match a.variant {
        Some(x) => vec![x],
        None => Variant::ALL.to_vec(),
    };
    let mut failed = Vec::new();
    for variant in variants {
        let mut model = SamModel::build(ModelConfig {
            variant,
            hidden: d,
            attr_dim: da,
            vocab_size: v,
            n_authors: 3,
            n_categories: 3,
            seed: 1,
        })?;
        for p in model.params_mut().values.iter_mut() {
            p.scale(a.scale);
        }
        let report = gradcheck_model(&model, &doc, a.eps, a.tol)?;
        println!("== {variant} (max relative error {:.3e})", report.max_rel_error());
        print!("{report}");
        if !report.passed() {
            failed.push(variant.name());
        }
    }
    if !failed.is_empty() {
        bail!("gradient check failed for {}", failed.join(", "));
    }
    Ok(())
}
