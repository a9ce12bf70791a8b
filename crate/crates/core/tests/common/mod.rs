#![allow(dead_code)]

use hypernas::archspace::{ArchitectureSpec, BenchRecord, CellRole, Primitive, SearchSpaceProfile};
use hypernas::hypernet::{AuxBatch, AuxDataset};
use hypernas::numerics::Tensor;
use hypernas::rng::{child_rng, normal_tensor};

pub fn record(architecture: ArchitectureSpec, val_acc: f64) -> BenchRecord {
    BenchRecord {
        id: "r".into(),
        architecture,
        val_acc,
        test_acc: None,
    }
}

pub fn aux_dataset(n: usize, seed: u64) -> AuxDataset {
    let mut rng = child_rng(seed, "test.aux");
    let images = normal_tensor(&mut rng, &[n * 64], 1.0).into_data();
    let labels = (0..n).map(|i| i % 4).collect();
    AuxDataset::new(1, 8, 8, 4, images, labels).unwrap()
}

pub fn aux_batch(n: usize, seed: u64) -> AuxBatch {
    let idx: Vec<usize> = (0..n).collect();
    aux_dataset(n, seed).batch(&idx).unwrap()
}

/// Kendall's τ-b by direct pair enumeration.
pub fn brute_kendall(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tx += 1;
            }
            if dy == 0.0 {
                ty += 1;
            }
            if dx != 0.0 && dy != 0.0 {
                if (dx > 0.0) == (dy > 0.0) {
                    conc += 1;
                } else {
                    disc += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as u64;
    if tx == n0 || ty == n0 {
        return None;
    }
    let numer = conc - disc;
    Some(numer as f64 / (((n0 - tx) as f64) * ((n0 - ty) as f64)).sqrt())
}

/// Rank of each value: one plus the number below it plus half the other ties.
pub fn direct_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let below = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            1.0 + below + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn direct_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let (rx, ry) = (direct_ranks(x), direct_ranks(y));
    let n = x.len() as f64;
    let sx: f64 = rx.iter().sum();
    let sy: f64 = ry.iter().sum();
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| a * b).sum();
    let sxx: f64 = rx.iter().map(|a| a * a).sum();
    let syy: f64 = ry.iter().map(|a| a * a).sum();
    let vx = n * sxx - sx * sx;
    let vy = n * syy - sy * sy;
    if vx.abs() < 1e-9 || vy.abs() < 1e-9 {
        return None;
    }
    Some((n * sxy - sx * sy) / (vx * vy).sqrt())
}

/// An NCHW feature map for the reference interpreter.
#[derive(Clone, Debug)]
pub struct Map {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Map {
    pub fn from_tensor(t: &Tensor) -> Map {
        let s = t.shape();
        Map {
            b: s[0],
            c: s[1],
            h: s[2],
            w: s[3],
            v: t.data().to_vec(),
        }
    }

    fn zeros_like(&self, c: usize, h: usize, w: usize) -> Map {
        Map {
            b: self.b,
            c,
            h,
            w,
            v: vec![0.0; self.b * c * h * w],
        }
    }

    fn at(&self, b: usize, c: usize, y: isize, x: isize) -> Option<f64> {
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            return None;
        }
        Some(self.v[((b * self.c + c) * self.h + y as usize) * self.w + x as usize])
    }

    fn set(&mut self, b: usize, c: usize, y: usize, x: usize, val: f64) {
        let i = ((b * self.c + c) * self.h + y) * self.w + x;
        self.v[i] = val;
    }
}

fn conv(x: &Map, w: &Tensor) -> Map {
    let s = w.shape();
    let (co, ci, k) = (s[0], s[1], s[2]);
    assert_eq!(ci, x.c);
    let r = (k / 2) as isize;
    let mut out = x.zeros_like(co, x.h, x.w);
    for b in 0..x.b {
        for o in 0..co {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let mut acc = 0.0;
                    for i in 0..ci {
                        for dy in 0..k {
                            for dx in 0..k {
                                let sy = y as isize + dy as isize - r;
                                let sx = xx as isize + dx as isize - r;
                                if let Some(v) = x.at(b, i, sy, sx) {
                                    acc += v * w.data()[((o * ci + i) * k + dy) * k + dx];
                                }
                            }
                        }
                    }
                    out.set(b, o, y, xx, acc);
                }
            }
        }
    }
    out
}

fn batch_norm(x: &Map) -> Map {
    let mut out = x.clone();
    let plane = x.h * x.w;
    let count = (x.b * plane) as f64;
    for c in 0..x.c {
        let vals: Vec<f64> = (0..x.b)
            .flat_map(|b| x.v[(b * x.c + c) * plane..(b * x.c + c + 1) * plane].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / count;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
        for b in 0..x.b {
            for p in 0..plane {
                let i = (b * x.c + c) * plane + p;
                out.v[i] = (x.v[i] - mean) / (var + 1e-5).sqrt();
            }
        }
    }
    out
}

fn pool(x: &Map, k: usize, max: bool) -> Map {
    let lo = -(((k - 1) / 2) as isize);
    let hi = (k / 2) as isize;
    let mut out = x.clone();
    for b in 0..x.b {
        for c in 0..x.c {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let vals: Vec<f64> = (lo..=hi)
                        .flat_map(|dy| (lo..=hi).map(move |dx| (dy, dx)))
                        .filter_map(|(dy, dx)| x.at(b, c, y as isize + dy, xx as isize + dx))
                        .collect();
                    let v = if max {
                        vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                    } else {
                        vals.iter().sum::<f64>() / (k * k) as f64
                    };
                    out.set(b, c, y, xx, v);
                }
            }
        }
    }
    out
}

fn downsample(x: &Map) -> Map {
    let mut out = x.zeros_like(2 * x.c, x.h / 2, x.w / 2);
    for b in 0..x.b {
        for c in 0..x.c {
            for y in 0..x.h / 2 {
                for xx in 0..x.w / 2 {
                    let (y2, x2) = (2 * y as isize, 2 * xx as isize);
                    let v = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|(dy, dx)| x.at(b, c, y2 + dy, x2 + dx).unwrap())
                        .sum::<f64>()
                        / 4.0;
                    out.set(b, c, y, xx, v);
                    out.set(b, c + x.c, y, xx, v);
                }
            }
        }
    }
    out
}

fn add(a: &Map, b: &Map) -> Map {
    let mut out = a.clone();
    for (o, v) in out.v.iter_mut().zip(&b.v) {
        *o += v;
    }
    out
}

/// Loop-level forward pass of a target network: stem, cells, global average
/// pooling and the classifier.
pub fn reference_forward(
    profile: &SearchSpaceProfile,
    arch: &ArchitectureSpec,
    weights: &[Vec<Option<Tensor>>],
    stem: &Tensor,
    classifier: &Tensor,
    input: &Tensor,
) -> Vec<f64> {
    let mut x = conv(&Map::from_tensor(input), stem);
    for (i, cell) in arch.cells.iter().enumerate() {
        if arch.roles[i] == CellRole::Reduction {
            x = downsample(&x);
        }
        let f = cell.num_nodes();
        let mut outs: Vec<Map> = vec![x.clone()];
        for v in 1..f {
            let preds: Vec<usize> = (0..v).filter(|&u| cell.adj[u][v] == 1).collect();
            let mut s = outs[preds[0]].clone();
            for &p in &preds[1..] {
                s = add(&s, &outs[p]);
            }
            let y = if v == f - 1 {
                s
            } else {
                match profile.vocabulary.primitive(cell.ops[v]).unwrap() {
                    Primitive::Identity => s,
                    Primitive::Zero => s.zeros_like(s.c, s.h, s.w),
                    Primitive::Conv { .. } => {
                        let mut c = batch_norm(&conv(&s, weights[i][v].as_ref().unwrap()));
                        for val in &mut c.v {
                            *val = val.max(0.0);
                        }
                        c
                    }
                    Primitive::AvgPool { kernel } => pool(&s, kernel, false),
                    Primitive::MaxPool { kernel } => pool(&s, kernel, true),
                }
            };
            outs.push(y);
        }
        x = outs.pop().unwrap();
    }
    let plane = (x.h * x.w) as f64;
    let classes = classifier.shape()[1];
    let mut logits = vec![0.0; x.b * classes];
    for b in 0..x.b {
        for c in 0..x.c {
            let g = x.v[(b * x.c + c) * x.h * x.w..(b * x.c + c + 1) * x.h * x.w].iter().sum::<f64>() / plane;
            for k in 0..classes {
                logits[b * classes + k] += g * classifier.data()[c * classes + k];
            }
        }
    }
    logits
}
