//! Procedural bird dataset: each class is a unique attribute tuple, each
//! image a bird drawn over a muted background with rectangle clutter, each
//! image paired with ten templated descriptions.

use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::manifest::{
    write_descriptions, write_manifest, SampleRecord, Split, DESCRIPTIONS_PER_IMAGE, MANIFEST_FILE,
    MIN_DESCRIPTION_WORDS,
};
use crate::data::ppm::write_ppm;
use crate::error::{CvlError, Result};
use crate::tensor::Tensor;
use crate::vision::image::{BoundingBox, Image, IMAGE_SIZE};

pub const COLORS: [(&str, [f64; 3]); 8] = [
    ("red", [0.85, 0.12, 0.10]),
    ("orange", [0.95, 0.55, 0.10]),
    ("yellow", [0.95, 0.90, 0.15]),
    ("green", [0.15, 0.65, 0.20]),
    ("blue", [0.15, 0.30, 0.85]),
    ("purple", [0.55, 0.20, 0.70]),
    ("black", [0.08, 0.08, 0.08]),
    ("white", [0.96, 0.96, 0.96]),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Bill {
    Long,
    Short,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WingPattern {
    Plain,
    Striped,
    Spotted,
}

const BILLS: [Bill; 2] = [Bill::Long, Bill::Short];
const WINGS: [WingPattern; 3] = [WingPattern::Plain, WingPattern::Striped, WingPattern::Spotted];

pub const NUM_COMBINATIONS: usize = 8 * 8 * 2 * 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BirdAttributes {
    /// Index into [`COLORS`].
    pub body: usize,
    pub head: usize,
    pub bill: Bill,
    pub wing: WingPattern,
}

impl BirdAttributes {
    pub fn from_index(i: usize) -> Self {
        BirdAttributes {
            body: i / 48,
            head: (i / 6) % 8,
            bill: BILLS[(i / 3) % 2],
            wing: WINGS[i % 3],
        }
    }

    fn distance(&self, o: &BirdAttributes) -> usize {
        2 * usize::from(self.body != o.body)
            + 2 * usize::from(self.head != o.head)
            + usize::from(self.bill != o.bill)
            + usize::from(self.wing != o.wing)
    }

    pub fn words(&self) -> [&'static str; 4] {
        [
            COLORS[self.body].0,
            COLORS[self.head].0,
            match self.bill {
                Bill::Long => "long",
                Bill::Short => "short",
            },
            match self.wing {
                WingPattern::Plain => "plain",
                WingPattern::Striped => "striped",
                WingPattern::Spotted => "spotted",
            },
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub images_per_class: usize,
    pub clutter: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_classes: 20,
            images_per_class: 30,
            clutter: 0.5,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > NUM_COMBINATIONS {
            return Err(CvlError::Spec(format!(
                "{} classes requested; between 1 and {NUM_COMBINATIONS} available",
                self.num_classes
            )));
        }
        if self.images_per_class == 0 {
            return Err(CvlError::Spec("images_per_class must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.clutter) {
            return Err(CvlError::Spec(format!("clutter {} outside [0, 1]", self.clutter)));
        }
        Ok(())
    }
}

/// Greedy farthest-first choice of `k` attribute tuples. Body and head
/// colours differ within a class, and colour pairs are not reused while
/// unused pairs remain. Ties prefer the least-used colours, then the
/// lowest combination index.
pub fn assign_classes(k: usize) -> Result<Vec<BirdAttributes>> {
    if k == 0 || k > NUM_COMBINATIONS {
        return Err(CvlError::Spec(format!(
            "{k} classes requested; between 1 and {NUM_COMBINATIONS} available"
        )));
    }
    let all: Vec<BirdAttributes> = (0..NUM_COMBINATIONS).map(BirdAttributes::from_index).collect();
    let mut used = vec![false; NUM_COMBINATIONS];
    let mut chosen: Vec<BirdAttributes> = Vec::with_capacity(k);
    while chosen.len() < k {
        let pair_used = |a: &BirdAttributes| chosen.iter().any(|c| c.body == a.body && c.head == a.head);
        let tiers: [&dyn Fn(&BirdAttributes) -> bool; 3] = [
            &|a| a.body != a.head && !pair_used(a),
            &|a| a.body != a.head,
            &|_| true,
        ];
        let mut body_use = [0usize; 8];
        let mut head_use = [0usize; 8];
        for c in &chosen {
            body_use[c.body] += 1;
            head_use[c.head] += 1;
        }
        let pick = tiers.iter().find_map(|ok| {
            // farthest first, then least-used colours
            let mut best: Option<(usize, (usize, isize))> = None;
            for (i, a) in all.iter().enumerate() {
                if used[i] || !ok(a) {
                    continue;
                }
                let d = chosen.iter().map(|c| c.distance(a)).min().unwrap_or(usize::MAX);
                let key = (d, -((body_use[a.body] + head_use[a.head]) as isize));
                if best.is_none_or(|(_, bk)| key > bk) {
                    best = Some((i, key));
                }
            }
            best.map(|(i, _)| i)
        });
        let i = pick.expect("k <= NUM_COMBINATIONS");
        used[i] = true;
        chosen.push(all[i]);
    }
    Ok(chosen)
}

/// A rendered image with its foreground mask and tight box.
#[derive(Clone, Debug)]
pub struct Rendered {
    pub image: Image,
    /// Row-major `H*W`: pixels covered by the bird.
    pub mask: Vec<bool>,
    pub gt_box: BoundingBox,
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] * (1.0 - t) + b[c] * t)
}

fn contrast(c: [f64; 3]) -> [f64; 3] {
    let lum = 0.3 * c[0] + 0.59 * c[1] + 0.11 * c[2];
    if lum > 0.5 {
        mix(c, [0.0; 3], 0.6)
    } else {
        mix(c, [1.0; 3], 0.6)
    }
}

const BILL_COLOR: [f64; 3] = [0.35, 0.28, 0.22];

/// Draws one image. All randomness comes from `rng`.
pub fn render_bird(attrs: &BirdAttributes, clutter: f64, rng: &mut impl Rng) -> Rendered {
    let n = IMAGE_SIZE;
    let mut px = vec![[0.0; 3]; n * n];

    let grey = rng.random_range(0.35..0.6);
    let base = [0, 1, 2].map(|_| grey + rng.random_range(-0.06..0.06));
    px.iter_mut().for_each(|p| *p = base);

    let rects = (8.0 * clutter).round() as usize;
    for _ in 0..rects {
        let (w, h) = (rng.random_range(4..=11), rng.random_range(4..=11));
        let (x0, y0) = (rng.random_range(0..=n - w), rng.random_range(0..=n - h));
        let colour = mix(COLORS[rng.random_range(0..COLORS.len())].1, base, 0.35);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                px[y * n + x] = colour;
            }
        }
    }

    // geometry in pixel units, relative to the body centre
    let s: f64 = rng.random_range(0.85..1.25);
    let facing = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let (rx, ry, hr) = (8.0 * s, 5.5 * s, 4.0 * s);
    let bill_len = match attrs.bill {
        Bill::Long => 6.5 * s,
        Bill::Short => 2.5 * s,
    };
    let (hdx, hdy) = (facing * rx * 0.85, -ry * 0.9);
    let reach = rx * 0.85 + hr * 0.7 + bill_len;
    let (left, right) = if facing > 0.0 { (rx, reach) } else { (reach, rx) };
    let (top, bottom) = (ry * 0.9 + hr, ry);
    let pad = 2.0;
    let cx = rng.random_range(left + pad..n as f64 - right - pad);
    let cy = rng.random_range(top + pad..n as f64 - bottom - pad);
    let (hx, hy) = (cx + hdx, cy + hdy);
    let tip = (hx + facing * (hr * 0.7 + bill_len), hy + 0.8 * s);
    let b1 = (hx + facing * hr * 0.5, hy - 1.6 * s);
    let b2 = (hx + facing * hr * 0.5, hy + 2.2 * s);
    let (wx, wy, wrx, wry) = (cx - facing * rx * 0.15, cy + ry * 0.1, rx * 0.6, ry * 0.55);
    let spot_phase = (rng.random_range(0..4), rng.random_range(0..4));

    let body = COLORS[attrs.body].1;
    let head = COLORS[attrs.head].1;
    let mark = contrast(body);
    let mut mask = vec![false; n * n];
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let i = y * n + x;
            let in_bill = in_triangle((fx, fy), tip, b1, b2);
            let in_head = (fx - hx).powi(2) + (fy - hy).powi(2) <= hr * hr;
            let in_body = ((fx - cx) / rx).powi(2) + ((fy - cy) / ry).powi(2) <= 1.0;
            if in_body {
                let in_wing = ((fx - wx) / wrx).powi(2) + ((fy - wy) / wry).powi(2) <= 1.0;
                px[i] = if in_wing {
                    match attrs.wing {
                        WingPattern::Plain => mix(body, mark, 0.25),
                        WingPattern::Striped if (x + y) % 4 < 2 => mark,
                        WingPattern::Spotted
                            if (x + spot_phase.0) % 4 == 0 && (y + spot_phase.1) % 3 == 0 =>
                        {
                            mark
                        }
                        _ => body,
                    }
                } else {
                    body
                };
            }
            if in_bill {
                px[i] = BILL_COLOR;
            }
            if in_head {
                px[i] = head;
            }
            mask[i] = in_body || in_head || in_bill;
        }
    }
    // eye
    let (ex, ey) = ((hx + facing * hr * 0.35) as usize, (hy - hr * 0.2) as usize);
    px[ey * n + ex] = mix(contrast(head), [0.0; 3], 0.5);

    let noise = Normal::new(0.0, 0.02).expect("valid sigma");
    let mut data = vec![0.0; 3 * n * n];
    for c in 0..3 {
        for i in 0..n * n {
            data[c * n * n + i] = (px[i][c] + noise.sample(rng)).clamp(0.0, 1.0);
        }
    }
    let image = Image::new(Tensor::new(&[3, n, n], data).expect("fixed shape")).expect("clamped");
    let gt_box = mask_box(&mask, n, n).expect("bird lies inside the frame");
    Rendered { image, mask, gt_box }
}

fn in_triangle(p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let cross = |o: (f64, f64), u: (f64, f64), v: (f64, f64)| (u.0 - o.0) * (v.1 - o.1) - (u.1 - o.1) * (v.0 - o.0);
    let (d1, d2, d3) = (cross(a, b, p), cross(b, c, p), cross(c, a, p));
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

/// Tight half-open box around the set pixels of a row-major mask.
pub fn mask_box(mask: &[bool], h: usize, w: usize) -> Option<BoundingBox> {
    let mut b: Option<BoundingBox> = None;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (y, x) = (i / w, i % w);
        b = Some(match b {
            None => BoundingBox::new(x, y, x + 1, y + 1),
            Some(b) => BoundingBox::new(b.x0.min(x), b.y0.min(y), b.x1.max(x + 1), b.y1.max(y + 1)),
        });
    }
    assert!(b.is_none_or(|b| b.is_valid_for(w, h)));
    b
}

// Frozen template bank. Part nouns and attribute words have synonyms;
// distractor clauses talk about pose and surroundings.
const OPENERS: [&str; 6] = [
    "this bird has",
    "the bird in this picture has",
    "this is a small bird with",
    "a little bird that has",
    "we can see a bird that has",
    "this particular bird shows",
];
const BODY_NOUNS: [&str; 4] = ["body", "belly and breast", "torso", "body plumage"];
const HEAD_NOUNS: [&str; 3] = ["head", "crown", "head and face"];
const BILL_NOUNS: [&str; 2] = ["bill", "beak"];
const LONG_WORDS: [&str; 3] = ["long", "elongated", "lengthy"];
const SHORT_WORDS: [&str; 3] = ["short", "stubby", "tiny"];
const PLAIN_WORDS: [&str; 3] = ["plain", "solid", "unmarked"];
const STRIPED_WORDS: [&str; 3] = ["striped", "barred", "streaked"];
const SPOTTED_WORDS: [&str; 3] = ["spotted", "speckled", "dotted"];
const WING_NOUNS: [&str; 2] = ["wings", "wing feathers"];
const COLOR_MODIFIERS: [&str; 4] = ["", "", "bright ", "mostly "];
const DISTRACTORS: [&str; 8] = [
    "while it is perched on a thin branch",
    "and it seems to be looking around carefully",
    "standing in front of a busy background",
    "and it is facing to one side of the frame",
    "while sitting very still among some scattered shapes",
    "and the photo was taken on a cloudy day",
    "next to a {c} object in the background",
    "with a few {c} blocks lying behind it",
];
const FILLERS: [&str; 3] = [
    "and it looks quite calm",
    "as it rests for a moment",
    "in a fairly ordinary pose",
];

fn color_phrase(c: usize, rng: &mut impl Rng) -> String {
    format!("{}{}", COLOR_MODIFIERS.choose(rng).expect("nonempty"), COLORS[c].0)
}

/// One description; always mentions body and head colour, usually bill and
/// wings, sometimes a distractor.
pub fn describe(attrs: &BirdAttributes, rng: &mut impl Rng) -> String {
    let mut parts = vec![
        format!("a {} {}", color_phrase(attrs.body, rng), BODY_NOUNS.choose(rng).expect("nonempty")),
        format!("a {} {}", color_phrase(attrs.head, rng), HEAD_NOUNS.choose(rng).expect("nonempty")),
    ];
    if rng.random_bool(0.75) {
        let len = match attrs.bill {
            Bill::Long => LONG_WORDS.choose(rng),
            Bill::Short => SHORT_WORDS.choose(rng),
        };
        parts.push(format!("a {} {}", len.expect("nonempty"), BILL_NOUNS.choose(rng).expect("nonempty")));
    }
    if rng.random_bool(0.75) {
        let pat = match attrs.wing {
            WingPattern::Plain => PLAIN_WORDS.choose(rng),
            WingPattern::Striped => STRIPED_WORDS.choose(rng),
            WingPattern::Spotted => SPOTTED_WORDS.choose(rng),
        };
        parts.push(format!("{} {}", pat.expect("nonempty"), WING_NOUNS.choose(rng).expect("nonempty")));
    }
    parts.shuffle(rng);
    let mut parts: Vec<String> = parts.into_iter().map(fix_article).collect();
    let last = parts.pop().expect("at least two parts");
    let mut s = format!("{} {} and {}", OPENERS.choose(rng).expect("nonempty"), parts.join(", "), last);
    if rng.random_bool(0.5) {
        let d = DISTRACTORS.choose(rng).expect("nonempty");
        let c = COLORS[rng.random_range(0..COLORS.len())].0;
        s = format!("{s}, {}", d.replace("{c}", c));
    }
    while s.split_whitespace().count() < MIN_DESCRIPTION_WORDS {
        s = format!("{s}, {}", FILLERS.choose(rng).expect("nonempty"));
    }
    s.push('.');
    s
}

fn fix_article(np: String) -> String {
    match np.strip_prefix("a ") {
        Some(rest) if rest.starts_with(['a', 'e', 'i', 'o', 'u']) => format!("an {rest}"),
        _ => np,
    }
}

/// Everything generated for one image, before it is written to disk.
#[derive(Clone, Debug)]
pub struct SynthSample {
    pub record: SampleRecord,
    pub rendered: Rendered,
}

pub fn image_id(index: usize) -> String {
    format!("img_{index:05}")
}

/// Per-image RNG, so images can be produced independently of each other.
pub fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index as u64)
}

/// Split tags by class: first 60% train, next 20% val, rest test, after a
/// seeded shuffle of each class's members.
fn stratified_splits(spec: &SynthSpec) -> Vec<Split> {
    let n = spec.images_per_class;
    let n_train = (0.6 * n as f64).round() as usize;
    let n_val = (0.2 * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(17));
    let mut out = vec![Split::Train; spec.num_classes * n];
    for k in 0..spec.num_classes {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        for (rank, &j) in idx.iter().enumerate() {
            out[k * n + j] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    out
}

/// Generates the samples in memory.
pub fn synthesize(spec: &SynthSpec) -> Result<Vec<SynthSample>> {
    spec.validate()?;
    let classes = assign_classes(spec.num_classes)?;
    let splits = stratified_splits(spec);
    let mut out = Vec::with_capacity(splits.len());
    for (index, &split) in splits.iter().enumerate() {
        let label = index / spec.images_per_class;
        let attrs = &classes[label];
        let mut rng = image_rng(spec.seed, index);
        let rendered = render_bird(attrs, spec.clutter, &mut rng);
        let descriptions: Vec<String> = (0..DESCRIPTIONS_PER_IMAGE).map(|_| describe(attrs, &mut rng)).collect();
        let id = image_id(index);
        out.push(SynthSample {
            record: SampleRecord {
                image_path: Path::new("images").join(format!("{id}.ppm")),
                image_id: id,
                label,
                split,
                descriptions,
                gt_box: rendered.gt_box,
            },
            rendered,
        });
    }
    Ok(out)
}

pub const CLASSES_FILE: &str = "classes.csv";

/// Writes images, descriptions, `classes.csv` and the manifest under `out_dir`.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<Vec<SampleRecord>> {
    let samples = synthesize(spec)?;
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| CvlError::io(&img_dir, e))?;
    for s in &samples {
        write_ppm(&out_dir.join(&s.record.image_path), &s.rendered.image)?;
        write_descriptions(out_dir, &s.record.image_id, &s.record.descriptions)?;
    }
    let mut classes = String::from("label,body,head,bill,wing\n");
    for (k, a) in assign_classes(spec.num_classes)?.iter().enumerate() {
        let [b, h, bill, wing] = a.words();
        classes.push_str(&format!("{k},{b},{h},{bill},{wing}\n"));
    }
    let cpath = out_dir.join(CLASSES_FILE);
    fs::write(&cpath, classes).map_err(|e| CvlError::io(&cpath, e))?;
    let records: Vec<SampleRecord> = samples.into_iter().map(|s| s.record).collect();
    write_manifest(&out_dir.join(MANIFEST_FILE), &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn classes_are_unique_and_distinct_in_colour() {
        let c = assign_classes(20).unwrap();
        let set: HashSet<_> = c.iter().collect();
        assert_eq!(set.len(), 20);
        let pairs: HashSet<_> = c.iter().map(|a| (a.body, a.head)).collect();
        assert_eq!(pairs.len(), 20);
        assert!(c.iter().all(|a| a.body != a.head));
        assert_eq!(assign_classes(NUM_COMBINATIONS).unwrap().len(), NUM_COMBINATIONS);
        assert!(assign_classes(NUM_COMBINATIONS + 1).is_err());
    }

    #[test]
    fn combination_indexing_covers_space() {
        let set: HashSet<_> = (0..NUM_COMBINATIONS).map(BirdAttributes::from_index).collect();
        assert_eq!(set.len(), 384);
    }

    #[test]
    fn descriptions_have_enough_words_and_attributes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for a in assign_classes(30).unwrap() {
            for _ in 0..20 {
                let d = describe(&a, &mut rng);
                assert!(d.split_whitespace().count() >= 10, "{d}");
                assert!(d.contains(COLORS[a.body].0) && d.contains(COLORS[a.head].0), "{d}");
            }
        }
    }

    #[test]
    fn box_is_tight_around_mask() {
        let a = BirdAttributes::from_index(100);
        for seed in 0..20 {
            let r = render_bird(&a, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
            let b = r.gt_box;
            let n = IMAGE_SIZE;
            assert!(b.is_valid_for(n, n));
            for y in 0..n {
                for x in 0..n {
                    if r.mask[y * n + x] {
                        assert!(b.contains(x, y));
                    }
                }
            }
            let row = |y: usize| (b.x0..b.x1).any(|x| r.mask[y * n + x]);
            let col = |x: usize| (b.y0..b.y1).any(|y| r.mask[y * n + x]);
            assert!(row(b.y0) && row(b.y1 - 1) && col(b.x0) && col(b.x1 - 1));
        }
    }

    #[test]
    fn splits_are_stratified() {
        let spec = SynthSpec {
            num_classes: 4,
            images_per_class: 30,
            ..Default::default()
        };
        let s = stratified_splits(&spec);
        for k in 0..4 {
            let count = |sp: Split| s[k * 30..(k + 1) * 30].iter().filter(|&&x| x == sp).count();
            assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (18, 6, 6));
        }
    }

    #[test]
    fn spec_errors() {
        let bad = SynthSpec {
            num_classes: 385,
            ..Default::default()
        };
        assert!(matches!(synthesize(&bad), Err(CvlError::Spec(_))));
    }
}
