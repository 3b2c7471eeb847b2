use super::*;

const PRIMITIVE_TOL: f64 = 1e-6;

fn random_store(seed: u64, shapes: &[(&str, &[usize])], scale: f64) -> (ParamStore, Vec<ParamId>) {
    let mut rng = RngStream::new(seed);
    let mut ps = ParamStore::new();
    let ids = shapes
        .iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| scale * rng.uniform_range(-1.0, 1.0)).collect();
            ps.insert(*name, Value::new(data, shape.to_vec()).unwrap(), true)
                .unwrap()
        })
        .collect();
    (ps, ids)
}

/// Reduces an arbitrary output to a scalar with fixed random weights and
/// gradient-checks it.
fn check_op<F>(seed: u64, shapes: &[(&str, &[usize])], build: F) -> GradCheckReport
where
    F: Fn(&mut Tape, &[ParamId]) -> Var,
{
    let (ps, ids) = random_store(seed, shapes, 1.0);
    let mut wrng = RngStream::new(seed ^ 0xABCD);
    let weights: Vec<f64> = (0..64).map(|_| wrng.uniform_range(-1.0, 1.0)).collect();
    grad_check(
        &ps,
        |p, g| {
            let mut t = Tape::new(p);
            let out = build(&mut t, &ids);
            let n = t.len_of(out);
            let c = t.constant(&weights[..n]);
            let loss = t.dot(out, c);
            t.backward(loss, g);
            Ok(t.scalar_value(loss))
        },
        PRIMITIVE_TOL,
    )
    .unwrap()
}

fn assert_passes(name: &str, r: &GradCheckReport) {
    assert!(
        r.passed(),
        "{name}: max rel error {:e} at {:?}",
        r.max_rel_error(),
        r.worst()
    );
}

#[test]
fn elementwise_primitives() {
    for seed in 0..5 {
        let shapes: &[(&str, &[usize])] = &[("a", &[6]), ("b", &[6])];
        assert_passes(
            "add",
            &check_op(seed, shapes, |t, p| {
                let (a, b) = (t.param(p[0]), t.param(p[1]));
                t.add(a, b)
            }),
        );
        assert_passes(
            "sub",
            &check_op(seed, shapes, |t, p| {
                let (a, b) = (t.param(p[0]), t.param(p[1]));
                t.sub(a, b)
            }),
        );
        assert_passes(
            "mul",
            &check_op(seed, shapes, |t, p| {
                let (a, b) = (t.param(p[0]), t.param(p[1]));
                t.mul(a, b)
            }),
        );
        assert_passes(
            "scale",
            &check_op(seed, shapes, |t, p| {
                let a = t.param(p[0]);
                t.scale(a, -2.5)
            }),
        );
        assert_passes(
            "sigmoid",
            &check_op(seed, shapes, |t, p| {
                let a = t.param(p[0]);
                t.sigmoid(a)
            }),
        );
        assert_passes(
            "tanh",
            &check_op(seed, shapes, |t, p| {
                let a = t.param(p[0]);
                t.tanh(a)
            }),
        );
        assert_passes(
            "exp",
            &check_op(seed, shapes, |t, p| {
                let a = t.param(p[0]);
                t.exp(a)
            }),
        );
        assert_passes(
            "softplus",
            &check_op(seed, shapes, |t, p| {
                let a = t.param(p[0]);
                t.softplus(a)
            }),
        );
    }
}

#[test]
fn reductions_and_structure() {
    for seed in 10..15 {
        let shapes: &[(&str, &[usize])] = &[("a", &[5]), ("b", &[3]), ("c", &[5])];
        assert_passes(
            "softmax",
            &check_op(seed, shapes, |t, p| {
                let a = t.param(p[0]);
                t.softmax(a)
            }),
        );
        assert_passes(
            "concat",
            &check_op(seed, shapes, |t, p| {
                let (a, b) = (t.param(p[0]), t.param(p[1]));
                let ab = t.concat(&[a, b]);
                t.tanh(ab)
            }),
        );
        assert_passes(
            "slice",
            &check_op(seed, shapes, |t, p| {
                let a = t.param(p[0]);
                let s = t.slice(a, 1, 3);
                t.exp(s)
            }),
        );
        assert_passes(
            "gather",
            &check_op(seed, shapes, |t, p| {
                let a = t.param(p[0]);
                t.gather(a, &[4, 0, 4, 2])
            }),
        );
        assert_passes(
            "dot",
            &check_op(seed, shapes, |t, p| {
                let (a, c) = (t.param(p[0]), t.param(p[2]));
                t.dot(a, c)
            }),
        );
        assert_passes(
            "mean",
            &check_op(seed, shapes, |t, p| {
                let a = t.param(p[0]);
                let e = t.exp(a);
                t.mean(e)
            }),
        );
        assert_passes(
            "sum",
            &check_op(seed, shapes, |t, p| {
                let a = t.param(p[0]);
                let s = t.tanh(a);
                t.sum(s)
            }),
        );
        assert_passes(
            "weighted_sum",
            &check_op(seed, shapes, |t, p| {
                let b = t.param(p[1]);
                let alpha = t.softmax(b);
                let a = t.param(p[0]);
                let c = t.param(p[2]);
                let ac = t.mul(a, c);
                t.weighted_sum(alpha, &[a, c, ac])
            }),
        );
    }
}

#[test]
fn affine_and_embedding_rows() {
    for seed in 20..25 {
        let shapes: &[(&str, &[usize])] = &[("w", &[4, 7]), ("b", &[4]), ("x", &[7]), ("e", &[5, 7])];
        assert_passes(
            "affine",
            &check_op(seed, shapes, |t, p| {
                let x = t.param(p[2]);
                t.affine(p[0], x, Some(p[1]))
            }),
        );
        assert_passes(
            "param_row",
            &check_op(seed, shapes, |t, p| {
                let r = t.param_row(p[3], 2);
                let r2 = t.param_row(p[3], 4);
                let s = t.mul(r, r2);
                t.affine(p[0], s, None)
            }),
        );
    }
}

#[test]
fn bce_of_sigmoid_of_linear() {
    for seed in 30..40 {
        let label = (seed % 2) as f64;
        let shapes: &[(&str, &[usize])] = &[("w", &[1, 4]), ("b", &[1]), ("x", &[4])];
        let (ps, ids) = random_store(seed, shapes, 1.0);
        let r = grad_check(
            &ps,
            |p, g| {
                let mut t = Tape::new(p);
                let x = t.param(ids[2]);
                let z = t.affine(ids[0], x, Some(ids[1]));
                let pr = t.sigmoid(z);
                let l = t.bce(pr, label, 3.0);
                t.backward(l, g);
                Ok(t.scalar_value(l))
            },
            PRIMITIVE_TOL,
        )
        .unwrap();
        assert_passes("bce", &r);
    }
}

#[test]
fn softmax_cross_entropy_gradient() {
    for seed in 40..45 {
        let shapes: &[(&str, &[usize])] = &[("w", &[6, 3]), ("h", &[3])];
        let (ps, ids) = random_store(seed, shapes, 1.0);
        let r = grad_check(
            &ps,
            |p, g| {
                let mut t = Tape::new(p);
                let h = t.param(ids[1]);
                let z = t.affine(ids[0], h, None);
                let l = t.softmax_cross_entropy(z, (seed as usize) % 6);
                t.backward(l, g);
                Ok(t.scalar_value(l))
            },
            PRIMITIVE_TOL,
        )
        .unwrap();
        assert_passes("xent", &r);
    }
}

fn plain_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Direct transcription of the gate equations, one gate matrix at a time.
fn gru_oracle(ps: &ParamStore, cell: GruParams, h: &[f64], x: &[f64]) -> Vec<f64> {
    let d = h.len();
    let m = x.len();
    let w = ps.get(cell.w);
    let u = ps.get(cell.u);
    let b = &ps.get(cell.b).data;
    let lin = |gate: usize, i: usize, hv: &[f64]| -> f64 {
        let r = gate * d + i;
        let wx: f64 = (0..m).map(|j| w.data[r * m + j] * x[j]).sum();
        let uh: f64 = (0..d).map(|j| u.data[r * d + j] * hv[j]).sum();
        wx + uh + b[r]
    };
    let z: Vec<f64> = (0..d).map(|i| plain_sigmoid(lin(0, i, h))).collect();
    let r: Vec<f64> = (0..d).map(|i| plain_sigmoid(lin(1, i, h))).collect();
    let rh: Vec<f64> = (0..d).map(|i| r[i] * h[i]).collect();
    let n: Vec<f64> = (0..d).map(|i| lin(2, i, &rh).tanh()).collect();
    (0..d).map(|i| (1.0 - z[i]) * n[i] + z[i] * h[i]).collect()
}

#[test]
fn gru_step_matches_gate_equations_and_gradients() {
    for seed in 50..55 {
        let shapes: &[(&str, &[usize])] = &[("w", &[12, 5]), ("u", &[12, 4]), ("b", &[12]), ("h", &[4]), ("x", &[5])];
        let (ps, ids) = random_store(seed, shapes, 1.0);
        let cell = GruParams {
            w: ids[0],
            u: ids[1],
            b: ids[2],
        };
        let mut t = Tape::new(&ps);
        let h = t.param(ids[3]);
        let x = t.param(ids[4]);
        let out = t.gru_step(cell, h, x);
        let expect = gru_oracle(&ps, cell, &ps.get(ids[3]).data, &ps.get(ids[4]).data);
        for (a, b) in t.value(out).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
        let r = check_op(seed, shapes, |t, p| {
            let h = t.param(p[3]);
            let x = t.param(p[4]);
            let cell = GruParams {
                w: p[0],
                u: p[1],
                b: p[2],
            };
            let h1 = t.gru_step(cell, h, x);
            t.gru_step(cell, h1, x)
        });
        assert_passes("gru", &r);
    }
}

#[test]
fn gru_zero_weight_cases() {
    let mut ps = ParamStore::new();
    let cell = GruParams {
        w: ps.insert("w", Value::zeros(&[3, 2]), true).unwrap(),
        u: ps.insert("u", Value::zeros(&[3, 1]), true).unwrap(),
        b: ps.insert("b", Value::zeros(&[3]), true).unwrap(),
    };
    let mut t = Tape::new(&ps);
    let h0 = t.constant(&[0.0]);
    let x = t.constant(&[0.7, -3.0]);
    let out = t.gru_step(cell, h0, x);
    assert_eq!(t.value(out), &[0.0]);
    let h1 = t.constant(&[1.0]);
    let out = t.gru_step(cell, h1, x);
    assert_eq!(t.value(out), &[0.5]);
}

#[test]
fn ode_evolve_gradients() {
    for seed in 60..64 {
        let d = 3;
        let shapes: Vec<(String, Vec<usize>)> = (0..4)
            .flat_map(|l| [(format!("w{l}"), vec![d, d]), (format!("b{l}"), vec![d])])
            .chain(std::iter::once(("y0".to_string(), vec![d])))
            .collect();
        let shape_refs: Vec<(&str, &[usize])> = shapes.iter().map(|(n, s)| (n.as_str(), s.as_slice())).collect();
        let r = check_op(seed, &shape_refs, |t, p| {
            let field = OdeFieldParams {
                w: [p[0], p[2], p[4], p[6]],
                b: [p[1], p[3], p[5], p[7]],
            };
            let y0 = t.param(p[8]);
            t.ode_evolve(field, y0, 0.15, 6).unwrap()
        });
        assert_passes("ode", &r);
    }
}

#[test]
fn dropout_on_tape_is_inverted() {
    let ps = ParamStore::new();
    let mut t = Tape::new(&ps);
    let x = t.constant(&[1.0; 1000]);
    let mut rng = RngStream::new(9);
    let y = t.dropout(x, 0.5, &mut rng);
    assert!(t.value(y).iter().all(|v| *v == 0.0 || *v == 2.0));
    let same = t.dropout(x, 0.0, &mut rng);
    assert_eq!(same, x);
}
