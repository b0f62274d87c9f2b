use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use diffpath::analysis::{
    anova_oneway, category_centers, default_saliency_layer, l2_distance, parts_topk, portion_hot, ranking_overlap,
    saliency_map, scalarize, AnovaResult, PortionHotVector, RankEnd, Scalarize,
};
use diffpath::attack::{build_adversarial_groups, default_gradcam_layer, grad_cam, AttackConfig};
use diffpath::data::idx::write_idx;
use diffpath::data::m2nist::{gen_m2nist, CANVAS};
use diffpath::data::pnm::write_pnm;
use diffpath::data::transform::{build_transform_groups, group_distances, TransformKind, DISTANCE_COLUMNS};
use diffpath::data::{load_manifest, DatasetFormat, DatasetManifest, LabeledDataset, Preprocess};
use diffpath::model::arch;
use diffpath::model::dpwn::Container;
use diffpath::pathway::{build_diffusion_kernels, DiffusionKernelSet, PathwayEngine, PathwayOptions, PathwayResult};
use diffpath::{load_model, Importance, LayerKind, Model, Tensor};
use serde::Serialize;
use serde_json::json;

use crate::cli::*;
use crate::output::*;

pub type Res<T> = std::result::Result<T, String>;

trait Ctx<T> {
    fn ctx(self, what: impl std::fmt::Display) -> Res<T>;
}

impl<T, E: std::fmt::Display> Ctx<T> for std::result::Result<T, E> {
    fn ctx(self, what: impl std::fmt::Display) -> Res<T> {
        self.map_err(|e| format!("{what}: {e}"))
    }
}

fn out_dir(path: &Path) -> Res<()> {
    std::fs::create_dir_all(path).ctx(path.display())
}

/// Writes `run.json`: the command name and its resolved arguments.
fn write_run(out: &Path, command: &str, args: &impl Serialize) -> Res<()> {
    let mut v = serde_json::to_value(args).ctx("run config")?;
    if let Some(m) = v.as_object_mut() {
        m.insert("command".into(), json!(command));
        m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    }
    write_json(&out.join("run.json"), &v).ctx("run.json")
}

struct Loaded {
    model: Model,
    kernels: DiffusionKernelSet,
    data: LabeledDataset,
    prep: Preprocess,
}

impl Loaded {
    fn open(inputs: &crate::args::Inputs) -> Res<Self> {
        let model = load_model(&inputs.model).ctx(inputs.model.display())?;
        let (data, prep) = load_manifest(&inputs.dataset).ctx(inputs.dataset.display())?;
        if data.shape != model.spec().input_shape() {
            return Err(format!(
                "dataset images are {:?} but the model expects {:?}",
                data.shape,
                model.spec().input_shape()
            ));
        }
        let kernels = build_diffusion_kernels(&model);
        Ok(Loaded {
            model,
            kernels,
            data,
            prep,
        })
    }

    fn labels(&self) -> Res<&[usize]> {
        self.data.single_labels().ctx("labels")
    }

    fn input(&self, i: usize) -> Res<Tensor> {
        self.prep.tensor(&self.data, i).ctx(format!("image {i}"))
    }

    fn pathways(&self, x: &Tensor, options: PathwayOptions) -> Res<PathwayResult> {
        diffpath::pathway::extract_pathways(&self.model, &self.kernels, x, options).ctx("pathway extraction")
    }

    fn portion_hot(&self, x: &Tensor, p: &crate::args::PathwayArgs) -> Res<PortionHotVector> {
        portion_hot(&self.pathways(x, p.options())?, p.topk).ctx("portion-hot")
    }
}

fn check_topk(k: usize) -> Res<()> {
    if k == 0 {
        return Err("--topk must be at least 1".into());
    }
    Ok(())
}

pub fn make_model(a: &MakeModel) -> Res<()> {
    let spec = arch::by_name(&a.arch, a.input, a.classes).ctx("architecture")?;
    Model::random(spec, a.seed).save(&a.out).ctx(a.out.display())
}

pub fn classify(a: &Classify) -> Res<()> {
    let l = Loaded::open(&a.inputs)?;
    l.data.check_index(a.index).ctx("--index")?;
    let trace = l.model.forward_trace(&l.input(a.index)?).ctx("forward pass")?;
    let report = json!({ "prediction": trace.predicted, "logits": trace.logits.data() });
    if let Some(out) = &a.out {
        out_dir(out)?;
        write_run(out, "classify", a)?;
        write_json(&out.join("classify.json"), &report).ctx("classify.json")?;
    }
    println!("{}", serde_json::to_string(&report).ctx("json")?);
    Ok(())
}

/// Relu gates of the forward pass and the channels kept at each layer.
fn masks_container(model: &Model, trace: &diffpath::ForwardTrace, keep: &[Vec<usize>], masked: bool) -> Container {
    let spec = model.spec();
    let mut tensors = Vec::new();
    for (i, m) in trace.relu_masks.iter().enumerate() {
        if let Some(m) = m {
            tensors.push((format!("relu/{}", spec.layers()[i].name), m.clone()));
        }
    }
    if masked {
        for (l, k) in keep.iter().enumerate().filter(|(_, k)| !k.is_empty()) {
            let t = Tensor::new(vec![k.len()], k.iter().map(|&c| c as f32).collect()).expect("keep-set shape");
            tensors.push((format!("keep/L{l}"), t));
        }
    }
    Container {
        arch: spec.to_arch(),
        input_shape: spec.input_shape(),
        classes: spec.classes(),
        tensors,
        meta: Some(json!({ "predicted": trace.predicted })),
    }
}

pub fn pathways(a: &Pathways) -> Res<()> {
    check_topk(a.pathway.topk)?;
    let l = Loaded::open(&a.inputs)?;
    let spec = l.model.spec();
    let sal_layer = a.layer.unwrap_or_else(|| default_saliency_layer(spec));
    let indices = if a.index.is_empty() { vec![0] } else { a.index.clone() };
    for &i in &indices {
        l.data.check_index(i).ctx("--index")?;
    }
    out_dir(&a.out)?;
    write_run(&a.out, "pathways", a)?;
    let options = a.pathway.options();
    let mut rows = Vec::with_capacity(indices.len());
    for &i in &indices {
        let trace = l.model.forward_trace(&l.input(i)?).ctx("forward pass")?;
        let engine = PathwayEngine::new(&l.model, &l.kernels, &trace, options).ctx("pathway engine")?;
        let result = engine.extract();
        result
            .to_container(spec)
            .write(a.out.join(format!("aggregates_{i}.dpwn")))
            .ctx("aggregates")?;
        for agg in &result.layers {
            let parts = parts_topk(agg, a.pathway.topk.min(agg.channels)).ctx("parts")?;
            render_parts(&parts, &a.out.join(format!("parts_{i}_L{}.pgm", agg.layer))).ctx("parts image")?;
        }
        let sal = saliency_map(&result, sal_layer).ctx("saliency")?;
        write_pnm(&sal.normalized, a.out.join(format!("saliency_{i}.pgm"))).ctx("saliency image")?;
        if !a.no_masks_dump {
            let masked = options.channel_mask != diffpath::pathway::ChannelMask::Off;
            masks_container(&l.model, &trace, &engine.keep_sets(), masked)
                .write(a.out.join(format!("masks_{i}.dpwn")))
                .ctx("masks")?;
        }
        let ph = portion_hot(&result, a.pathway.topk).ctx("portion-hot")?;
        rows.push(portion_hot_row(i, &ph));
    }
    write_csv(&a.out.join("portion_hot.csv"), &portion_hot_header(&spec.pathway_channels()), &rows).ctx("csv")
}

fn read_aggregates(path: &Path) -> Res<PathwayResult> {
    PathwayResult::from_container(&Container::read(path).ctx(path.display())?).ctx(path.display())
}

pub fn parts(a: &Parts) -> Res<()> {
    check_topk(a.topk)?;
    let result = read_aggregates(&a.aggregates)?;
    out_dir(&a.out)?;
    write_run(&a.out, "parts", a)?;
    let layers: Vec<usize> = match a.layer {
        Some(l) => vec![l],
        None => (0..result.layers.len()).collect(),
    };
    let mut report = Vec::new();
    for l in layers {
        let agg = result.layer(l).ctx("--layer")?;
        let p = parts_topk(agg, a.topk.min(agg.channels)).ctx("parts")?;
        render_parts(&p, &a.out.join(format!("parts_L{l}.pgm"))).ctx("parts image")?;
        let (largest, ratio) = p.largest();
        report.push(json!({
            "layer": l,
            "k": p.k,
            "sizes": p.sizes,
            "ratios": p.ratios(),
            "largest": { "channel": largest, "ratio": ratio },
        }));
    }
    write_json(&a.out.join("parts.json"), &report).ctx("parts.json")
}

pub fn saliency(a: &SaliencyCmd) -> Res<()> {
    let result = read_aggregates(&a.aggregates)?;
    let layer = a.layer.unwrap_or(result.layers.len().saturating_sub(1));
    let sal = saliency_map(&result, layer).ctx("saliency")?;
    out_dir(&a.out)?;
    write_run(&a.out, "saliency", a)?;
    write_pnm(&sal.normalized, a.out.join("saliency.pgm")).ctx("saliency.pgm")?;
    let w = result.layer(layer).ctx("layer")?.width;
    let rows: Vec<String> = sal.raw.chunks(w).map(fmt_f64s).collect();
    std::fs::write(a.out.join("saliency.csv"), rows.join("\n") + "\n").ctx("saliency.csv")
}

pub fn portion_hot_cmd(a: &PortionHot) -> Res<()> {
    check_topk(a.pathway.topk)?;
    let l = Loaded::open(&a.inputs)?;
    let indices = a.select.resolve(l.data.len());
    for &i in &indices {
        l.data.check_index(i).ctx("--index")?;
    }
    out_dir(&a.out)?;
    write_run(&a.out, "portion-hot", a)?;
    let mut rows = Vec::with_capacity(indices.len());
    for &i in &indices {
        rows.push(portion_hot_row(i, &l.portion_hot(&l.input(i)?, &a.pathway)?));
    }
    let header = portion_hot_header(&l.model.spec().pathway_channels());
    write_csv(&a.out.join("portion_hot.csv"), &header, &rows).ctx("csv")
}

pub fn distances(a: &Distances) -> Res<()> {
    let (ids, vectors) = read_portion_hot(&a.input).ctx(a.input.display())?;
    let mut header = vec!["id".to_string()];
    header.extend(ids.iter().map(|i| i.to_string()));
    let mut rows = Vec::with_capacity(ids.len());
    for (i, v) in vectors.iter().enumerate() {
        let mut row = vec![ids[i].to_string()];
        for w in &vectors {
            row.push(l2_distance(v, w).ctx("distance")?.to_string());
        }
        rows.push(row);
    }
    write_csv(&a.out, &header, &rows).ctx(a.out.display())
}

pub fn centers(a: &Centers) -> Res<()> {
    let (ids, vectors) = read_portion_hot(&a.input).ctx(a.input.display())?;
    let (data, _) = load_manifest(&a.dataset).ctx(a.dataset.display())?;
    let all = data.single_labels().ctx("labels")?;
    let labels: Vec<usize> = ids
        .iter()
        .map(|&i| all.get(i).copied().ok_or_else(|| format!("id {i} is not in the dataset")))
        .collect::<Res<_>>()?;
    let c = category_centers(&vectors, &labels).ctx("centers")?;
    out_dir(&a.out)?;
    write_run(&a.out, "centers", a)?;
    write_json(&a.out.join("centers.json"), &c).ctx("centers.json")?;
    let mut rows = Vec::with_capacity(ids.len());
    for ((id, label), v) in ids.iter().zip(&labels).zip(&vectors) {
        let own = dist(&v.values, &c.per_label[label]);
        let global = dist(&v.values, &c.global);
        rows.push(vec![id.to_string(), label.to_string(), own.to_string(), global.to_string()]);
    }
    let header = ["id", "label", "dist_center", "dist_global"].map(String::from);
    write_csv(&a.out.join("center_distances.csv"), &header, &rows).ctx("csv")
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn anova(a: &Anova) -> Res<()> {
    let groups: Vec<Vec<f64>> = match &a.dataset {
        Some(d) => {
            let (ids, vectors) = read_portion_hot(&a.input).ctx(a.input.display())?;
            let (data, _) = load_manifest(d).ctx(d.display())?;
            let all = data.single_labels().ctx("labels")?;
            let scalars = scalarize(&vectors, Scalarize::DistToGlobalCenter).ctx("scalarize")?;
            let mut by_label: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for (&id, s) in ids.iter().zip(scalars) {
                let label = *all.get(id).ok_or_else(|| format!("id {id} is not in the dataset"))?;
                by_label.entry(label).or_default().push(s);
            }
            by_label.into_values().collect()
        }
        None => {
            let t = read_table(&a.input).ctx(a.input.display())?;
            (1..t.header.len()).map(|c| t.rows.iter().map(|r| r[c]).collect()).collect()
        }
    };
    let result = anova_oneway(&groups, a.alpha).ctx("anova")?;
    if let Some(out) = &a.out {
        out_dir(out)?;
        write_run(out, "anova", a)?;
        write_json(&out.join("anova.json"), &result).ctx("anova.json")?;
    }
    println!("{}", serde_json::to_string(&result).ctx("json")?);
    Ok(())
}

/// ANOVA over distance columns, or the reason it could not be computed.
fn column_anova(columns: &[Vec<f64>], alpha: f64) -> serde_json::Value {
    match anova_oneway(columns, alpha) {
        Ok(r) => serde_json::to_value::<AnovaResult>(r).expect("anova json"),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn write_study(
    out: &Path,
    columns: &[&str],
    rows: Vec<(usize, Vec<f64>)>,
    manifest: serde_json::Value,
    alpha: f64,
) -> Res<()> {
    let mut header = vec!["group".to_string()];
    header.extend(columns.iter().map(|c| c.to_string()));
    let text: Vec<Vec<String>> = rows
        .iter()
        .map(|(g, d)| std::iter::once(g.to_string()).chain(d.iter().map(f64::to_string)).collect())
        .collect();
    write_csv(&out.join("distances.csv"), &header, &text).ctx("distances.csv")?;
    write_json(&out.join("groups.json"), &manifest).ctx("groups.json")?;
    let cols: Vec<Vec<f64>> = (0..columns.len()).map(|c| rows.iter().map(|(_, d)| d[c]).collect()).collect();
    write_json(&out.join("anova.json"), &column_anova(&cols, alpha)).ctx("anova.json")
}

pub const ADVERSARIAL_COLUMNS: [&str; 3] = ["orig_adv", "orig_target", "adv_target"];

pub fn study_adversarial(a: &StudyAdversarial) -> Res<()> {
    check_topk(a.pathway.topk)?;
    let l = Loaded::open(&a.inputs)?;
    let labels = l.labels()?.to_vec();
    let images: Vec<Tensor> = (0..l.data.len()).map(|i| l.input(i)).collect::<Res<_>>()?;
    let (lo, hi) = l.prep.bounds(l.data.shape[0]).ctx("preprocessing")?;
    let cfg = AttackConfig {
        epsilon: a.eps,
        lo,
        hi,
        max_attempts: a.max_attempts,
    };
    out_dir(&a.out)?;
    write_run(&a.out, "study-adversarial", a)?;
    let build = build_adversarial_groups(&l.model, &images, &labels, a.count, &cfg, a.seed).ctx("adversarial groups")?;
    let mut rows = Vec::with_capacity(build.groups.len());
    let mut entries = Vec::with_capacity(build.groups.len());
    for (gi, g) in build.groups.iter().enumerate() {
        let o = l.portion_hot(&images[g.original_index], &a.pathway)?;
        let v = l.portion_hot(&g.adversarial, &a.pathway)?;
        let t = l.portion_hot(&images[g.target_index], &a.pathway)?;
        let d = vec![
            l2_distance(&o, &v).ctx("distance")?,
            l2_distance(&o, &t).ctx("distance")?,
            l2_distance(&v, &t).ctx("distance")?,
        ];
        rows.push((gi, d));
        entries.push(json!({
            "group": gi,
            "original_index": g.original_index,
            "label": g.label,
            "adversarial_prediction": g.adversarial_prediction,
            "target_index": g.target_index,
            "epsilon": g.epsilon,
        }));
    }
    let manifest = json!({
        "kind": "adversarial",
        "requested": a.count,
        "found": build.groups.len(),
        "warning": build.warning,
        "groups": entries,
    });
    if let Some(w) = &build.warning {
        eprintln!("warning: {w}");
    }
    write_study(&a.out, &ADVERSARIAL_COLUMNS, rows, manifest, a.alpha)
}

pub fn study_transform(a: &StudyTransform, kind: TransformKind) -> Res<()> {
    check_topk(a.pathway.topk)?;
    let l = Loaded::open(&a.inputs)?;
    let labels = l.labels()?.to_vec();
    let units: Vec<Tensor> = (0..l.data.len()).map(|i| l.data.unit_tensor(i)).collect();
    let name = match kind {
        TransformKind::Rotate => "study-rotate",
        TransformKind::Occlude => "study-occlude",
    };
    out_dir(&a.out)?;
    write_run(&a.out, name, a)?;
    let build =
        build_transform_groups(&l.model, &units, &labels, kind, a.count, a.seed, &l.prep).ctx("transform groups")?;
    let ph = |x: &Tensor| -> Res<PortionHotVector> { l.portion_hot(&l.prep.apply(x).ctx("preprocessing")?, &a.pathway) };
    let mut rows = Vec::with_capacity(build.groups.len());
    let mut entries = Vec::with_capacity(build.groups.len());
    for (gi, g) in build.groups.iter().enumerate() {
        let d = group_distances(
            &ph(&units[g.original_index])?,
            &ph(&g.invariant)?,
            &ph(&g.variant)?,
            &ph(&units[g.target_index])?,
        )
        .ctx("distance")?;
        rows.push((gi, d.to_vec()));
        entries.push(json!({
            "group": gi,
            "original_index": g.original_index,
            "label": g.label,
            "invariant": g.invariant_transform,
            "variant": g.variant_transform,
            "variant_prediction": g.variant_prediction,
            "target_index": g.target_index,
        }));
    }
    let manifest = json!({
        "kind": kind,
        "requested": a.count,
        "found": build.groups.len(),
        "warning": build.warning,
        "groups": entries,
    });
    if let Some(w) = &build.warning {
        eprintln!("warning: {w}");
    }
    write_study(&a.out, &DISTANCE_COLUMNS, rows, manifest, a.alpha)
}

pub fn gradcam(a: &GradCamCmd) -> Res<()> {
    let l = Loaded::open(&a.inputs)?;
    l.data.check_index(a.index).ctx("--index")?;
    let spec = l.model.spec();
    let layer = match &a.layer {
        Some(name) => spec.layer_index(name).ok_or_else(|| format!("no layer named {name:?}"))?,
        None => default_gradcam_layer(spec).ok_or("model has no conv layer")?,
    };
    let x = l.input(a.index)?;
    let class = match a.class {
        Some(c) => c,
        None => l.model.predict(&x).ctx("forward pass")?,
    };
    let cam = grad_cam(&l.model, &x, class, layer).ctx("grad-cam")?;
    out_dir(&a.out)?;
    write_run(&a.out, "gradcam", a)?;
    write_pnm(&cam.heatmap, a.out.join("gradcam.pgm")).ctx("gradcam.pgm")?;
    let result = l.pathways(&x, a.pathway.options())?;
    let sal_layer = default_saliency_layer(spec);
    let sal = saliency_map(&result, sal_layer).ctx("saliency")?;
    write_pnm(&sal.normalized, a.out.join("saliency.pgm")).ctx("saliency.pgm")?;
    write_json(
        &a.out.join("gradcam.json"),
        &json!({
            "layer": spec.layers()[layer].name,
            "class": class,
            "alpha": cam.alpha,
            "saliency_layer": sal_layer,
        }),
    )
    .ctx("gradcam.json")
}

pub fn overlap(a: &Overlap) -> Res<()> {
    let l = Loaded::open(&a.inputs)?;
    let spec = l.model.spec();
    let indices = a.select.resolve(l.data.len());
    if indices.is_empty() {
        return Err("no images selected".into());
    }
    for &i in &indices {
        l.data.check_index(i).ctx("--index")?;
    }
    let counts = spec.pathway_channels();
    if let Some(c) = counts.iter().find(|&&c| a.n > c) {
        return Err(format!("--n {} exceeds a layer with {c} channels", a.n));
    }
    out_dir(&a.out)?;
    write_run(&a.out, "overlap", a)?;
    let ends = [RankEnd::Largest, RankEnd::Smallest];
    let mut totals = vec![[0usize; 2]; counts.len()];
    for &i in &indices {
        let trace = l.model.forward_trace(&l.input(i)?).ctx("forward pass")?;
        let result = diffpath::pathway::extract_with_trace(&l.model, &l.kernels, &trace, a.pathway.options())
            .ctx("pathway extraction")?;
        let method = match a.pathway.importance {
            crate::args::ImportanceArg::ActivationL1 => Importance::ActivationL1,
            crate::args::ImportanceArg::GradTimesActivation => Importance::GradTimesActivation {
                class: trace.predicted,
            },
        };
        for (layer, t) in totals.iter_mut().enumerate() {
            for (e, end) in ends.iter().enumerate() {
                t[e] += ranking_overlap(&l.model, &result, &trace, layer, a.n, *end, method).ctx("overlap")?;
            }
        }
    }
    let n = indices.len() as f64;
    let layers: Vec<_> = totals
        .iter()
        .enumerate()
        .map(|(layer, t)| {
            let model_layer = spec.pathway_layers()[layer];
            json!({
                "layer": layer,
                "name": spec.layers()[model_layer].name,
                "kind": match spec.layers()[model_layer].kind { LayerKind::MaxPool => "pool", _ => "conv" },
                "channels": counts[layer],
                "largest": t[0] as f64 / n,
                "smallest": t[1] as f64 / n,
            })
        })
        .collect();
    let report = json!({ "n": a.n, "images": indices.len(), "layers": layers });
    write_json(&a.out.join("overlap.json"), &report).ctx("overlap.json")
}

pub fn m2nist(a: &M2nistCmd) -> Res<()> {
    let (mnist, _) = load_manifest(&a.dataset).ctx(a.dataset.display())?;
    let m = gen_m2nist(&mnist, a.count, a.seed, a.canvas.unwrap_or(CANVAS), a.size).ctx("m2nist")?;
    out_dir(&a.out)?;
    write_run(&a.out, "m2nist", a)?;
    write_idx(&m.data, a.out.join("images.idx"), a.out.join("labels.idx")).ctx("idx")?;
    DatasetManifest {
        format: DatasetFormat::Idx,
        files: vec![PathBuf::from("images.idx"), PathBuf::from("labels.idx")],
        split: m.data.split,
        preprocess: Preprocess::default(),
    }
    .write(a.out.join("manifest.json"))
    .ctx("manifest.json")?;
    write_json(&a.out.join("boxes.json"), &m.boxes).ctx("boxes.json")
}
