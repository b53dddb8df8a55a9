//! Finite-difference checks of every differentiable piece, shared by the
//! gradient tests and the acceptance run.

use frontierlab::autodiff::{NodeId, NumArray, Shape, Tape};
use frontierlab::market::{BlackScholesModel, Correlation, MarketModel, PathBatch, TimeGrid};
use frontierlab::network::{NetworkParams, OutputHead};
use frontierlab::objectives::{
    assemble_loss, cvar_empirical, mean_cvar, mv_aux, mv_direct, penalty_box, penalty_budget, penalty_local,
    Aggregation, Criterion, LabelSegment, ObjectiveSpec, PenaltyModel,
};
use frontierlab::portfolio::{rollout, WealthForm};
use frontierlab::strategy::{
    project_to_budget, rescale_to_box, simplex_weights, Bounds, InitialWeights, InputLayout, MoveLimit, Policy,
    StrategyKind, StrategySpec,
};
use frontierlab::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

fn random(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Builds `f` on fresh leaves for `inputs`, reduces the output with fixed
/// random weights, and compares every input partial with a central difference.
fn check<F>(name: &str, inputs: &[NumArray], tol: f64, f: F)
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let eval = |vals: &[NumArray]| -> (Tape, Vec<NodeId>, NodeId) {
        let mut t = Tape::new();
        let ids: Vec<NodeId> = vals.iter().map(|v| t.leaf(v.clone())).collect();
        let out = f(&mut t, &ids).unwrap();
        let shape = t.shape(out);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let w = t.constant(NumArray::from_shape(shape, random(&mut rng, shape.len(), 0.5, 1.5)));
        let prod = t.mul(out, w).unwrap();
        let loss = t.sum(prod).unwrap();
        (t, ids, loss)
    };
    let (t, ids, loss) = eval(inputs);
    let grads = t.backward(loss).unwrap();
    for (k, input) in inputs.iter().enumerate() {
        let g = grads.get_or_zeros(ids[k], input.shape());
        for i in 0..input.len() {
            let bump = |delta: f64| {
                let mut vals = inputs.to_vec();
                vals[k].data_mut()[i] += delta;
                let (t, _, loss) = eval(&vals);
                t.scalar(loss)
            };
            let numeric = (bump(H) - bump(-H)) / (2.0 * H);
            let err = rel_err(g.data()[i], numeric);
            assert!(
                err < tol,
                "{name}: input {k} entry {i}: analytic {} numeric {numeric} rel err {err:e}",
                g.data()[i]
            );
        }
    }
}

trait FromShape {
    fn from_shape(shape: Shape, data: Vec<f64>) -> NumArray;
}

impl FromShape for NumArray {
    fn from_shape(shape: Shape, data: Vec<f64>) -> NumArray {
        match shape {
            Shape::Scalar => NumArray::scalar(data[0]),
            Shape::Vector(_) => NumArray::vector(data),
            Shape::Matrix(r, c) => NumArray::matrix(r, c, data).unwrap(),
        }
    }
}

fn vec_in(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> NumArray {
    NumArray::vector(random(rng, n, lo, hi))
}

fn mat_in(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> NumArray {
    NumArray::matrix(r, c, random(rng, r * c, lo, hi)).unwrap()
}

/// Values bounded away from zero, so kinked ops are checked off their kinks.
fn off_zero(rng: &mut ChaCha8Rng, n: usize) -> NumArray {
    NumArray::vector(
        (0..n)
            .map(|_| {
                let m = rng.random_range(0.1..1.5);
                if rng.random::<bool>() {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
}

const SMOOTH: f64 = 1e-5;

pub fn elementwise_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = vec_in(&mut rng, 5, -1.5, 1.5);
    let b = vec_in(&mut rng, 5, 0.5, 2.0);
    let two = [a.clone(), b.clone()];
    check("add", &two, SMOOTH, |t, x| t.add(x[0], x[1]));
    check("sub", &two, SMOOTH, |t, x| t.sub(x[0], x[1]));
    check("mul", &two, SMOOTH, |t, x| t.mul(x[0], x[1]));
    check("div", &two, SMOOTH, |t, x| t.div(x[0], x[1]));
    let one = [a];
    check("scale", &one, SMOOTH, |t, x| t.scale(x[0], -2.5));
    check("offset", &one, SMOOTH, |t, x| t.offset(x[0], 0.75));
    check("tanh", &one, SMOOTH, |t, x| t.tanh(x[0]));
    check("sigmoid", &one, SMOOTH, |t, x| t.sigmoid(x[0]));
    check("square", &one, SMOOTH, |t, x| t.square(x[0]));
    let kinked = [off_zero(&mut rng, 6)];
    check("pos_part", &kinked, SMOOTH, |t, x| t.pos_part(x[0]));
    check("abs", &kinked, SMOOTH, |t, x| t.abs(x[0]));
    check("clip", &kinked, SMOOTH, |t, x| t.clip(x[0], vec![-0.5], vec![0.55]));
}

pub fn reductions_and_matrix_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = [vec_in(&mut rng, 7, -2.0, 2.0)];
    check("sum", &v, SMOOTH, |t, x| t.sum(x[0]));
    check("mean", &v, SMOOTH, |t, x| t.mean(x[0]));
    check("variance", &v, SMOOTH, |t, x| t.variance(x[0]));
    check("segment", &v, SMOOTH, |t, x| t.segment(x[0], 2, 3));
    let distinct = [NumArray::vector(vec![0.3, -1.2, 2.2, 0.9, -0.1, 1.7, 0.0])];
    check("tail_mean", &distinct, SMOOTH, |t, x| t.tail_mean(x[0], 3));

    let m = mat_in(&mut rng, 3, 4, -1.0, 1.0);
    let x = vec_in(&mut rng, 4, -1.0, 1.0);
    check("matvec", &[m.clone(), x], SMOOTH, |t, i| t.matvec(i[0], i[1]));
    let n = mat_in(&mut rng, 4, 5, -1.0, 1.0);
    check("matmul", &[m.clone(), n], SMOOTH, |t, i| t.matmul(i[0], i[1]));
    let col = vec_in(&mut rng, 3, -1.0, 1.0);
    check("add_column", &[m.clone(), col], SMOOTH, |t, i| t.add_column(i[0], i[1]));
    check("sum_rows", &[m.clone()], SMOOTH, |t, i| t.sum_rows(i[0]));
    check("row", &[m.clone()], SMOOTH, |t, i| t.row(i[0], 1));
    let den = vec_in(&mut rng, 4, 0.5, 2.0);
    check("div_columns", &[m.clone(), den], SMOOTH, |t, i| t.div_columns(i[0], i[1]));
    check("row_affine", &[m.clone()], SMOOTH, |t, i| {
        t.row_affine(i[0], vec![0.1, 0.2, 0.3], vec![2.0, -1.0, 0.5])
    });
    let rows = [vec_in(&mut rng, 4, -1.0, 1.0), vec_in(&mut rng, 4, -1.0, 1.0)];
    check("stack_rows", &rows, SMOOTH, |t, i| t.stack_rows(&[i[0], i[1], i[0]]));
}

pub fn subgradient_conventions_at_kinks() {
    let mut t = Tape::new();
    let x = t.leaf(NumArray::vector(vec![0.0, 0.0, 1.0, 1.0]));
    let p = t.pos_part(x).unwrap();
    let s = t.sum(p).unwrap();
    assert_eq!(t.backward(s).unwrap().get(x).unwrap().data(), &[0.0, 0.0, 1.0, 1.0]);

    let mut t = Tape::new();
    let x = t.leaf(NumArray::vector(vec![0.0, -2.0, 3.0]));
    let a = t.abs(x).unwrap();
    let s = t.sum(a).unwrap();
    assert_eq!(t.backward(s).unwrap().get(x).unwrap().data(), &[0.0, -1.0, 1.0]);

    let mut t = Tape::new();
    let x = t.leaf(NumArray::vector(vec![0.0, 1.0, 0.5, -1.0]));
    let c = t.clip(x, vec![0.0], vec![1.0]).unwrap();
    let s = t.sum(c).unwrap();
    assert_eq!(t.backward(s).unwrap().get(x).unwrap().data(), &[0.0, 0.0, 1.0, 0.0]);
}

pub fn mlp_parameters_and_inputs() {
    for (head, seed) in [
        (OutputHead::Identity, 3),
        (OutputHead::Sigmoid, 4),
        (OutputHead::Tanh, 5),
    ] {
        let net = NetworkParams::for_policy(3, 2, head, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = mat_in(&mut rng, 3, 4, -1.0, 1.0);
        check(&format!("mlp input, {} head", head.name()), &[batch.clone()], SMOOTH, |t, x| {
            let nodes = net.record(t);
            nodes.forward(t, x[0])
        });
        let weights = random(&mut rng, 8, 0.5, 1.5);
        let run = |n: &NetworkParams| {
            let mut t = Tape::new();
            let nodes = n.record(&mut t);
            let x = t.constant(batch.clone());
            let out = nodes.forward(&mut t, x).unwrap();
            let w = t.constant(NumArray::matrix(2, 4, weights.clone()).unwrap());
            let prod = t.mul(out, w).unwrap();
            let loss = t.sum(prod).unwrap();
            let g = nodes.flat_gradient(&t.backward(loss).unwrap(), &t);
            (t.scalar(loss), g)
        };
        let (_, g) = run(&net);
        let flat = net.flat();
        for i in 0..flat.len() {
            let at = |delta: f64| {
                let mut n = net.clone();
                let mut f = flat.clone();
                f[i] += delta;
                n.set_flat(&f).unwrap();
                run(&n).0
            };
            let numeric = (at(H) - at(-H)) / (2.0 * H);
            let err = rel_err(g[i], numeric);
            assert!(err < SMOOTH, "mlp param {i}: analytic {} numeric {numeric} rel err {err:e}", g[i]);
        }
    }
}

/// Gradient of `loss(params)` against finite differences, for any policy.
fn check_policy<F>(name: &str, policy: &Policy, tol: f64, loss: F)
where
    F: Fn(&mut Tape, &frontierlab::strategy::RecordedPolicy<'_>) -> Result<NodeId>,
{
    let value = |p: &Policy| {
        let mut t = Tape::new();
        let rec = p.record(&mut t);
        let l = loss(&mut t, &rec).unwrap();
        t.scalar(l)
    };
    let mut t = Tape::new();
    let rec = policy.record(&mut t);
    let l = loss(&mut t, &rec).unwrap();
    let g = rec.flat_gradient(&t.backward(l).unwrap(), &t);
    let flat = policy.flat();
    assert_eq!(g.len(), flat.len());
    for i in 0..flat.len() {
        let at = |delta: f64| {
            let mut p = policy.clone();
            let mut f = flat.clone();
            f[i] += delta;
            p.set_flat(&f).unwrap();
            value(&p)
        };
        let numeric = (at(H) - at(-H)) / (2.0 * H);
        let err = rel_err(g[i], numeric);
        assert!(err < tol, "{name}: param {i}: analytic {} numeric {numeric} rel err {err:e}", g[i]);
    }
}

fn tiny_market() -> (MarketModel, TimeGrid, PathBatch) {
    let rho = Correlation::from_rows(&[&[1.0, 0.3], &[0.3, 1.0]]).unwrap();
    let m = MarketModel::BlackScholes(BlackScholesModel::new(vec![0.08, 0.03], vec![0.3, 0.15], rho).unwrap());
    let grid = TimeGrid::new(1.0, 3).unwrap();
    let paths = m.simulate(&grid, 17, 0, 8);
    (m, grid, paths)
}

fn layout(beta_max: Option<f64>) -> InputLayout {
    InputLayout {
        horizon: 1.0,
        x0: 1.0,
        v0: None,
        beta_max,
    }
}

const END_TO_END: f64 = 1e-4;

pub fn mlp_parameter_gradient_through_rollout() {
    let (_, grid, paths) = tiny_market();
    let policy = Policy::new(StrategySpec::new(StrategyKind::Unconstrained), 2, layout(None), 8).unwrap();
    for form in [WealthForm::Additive, WealthForm::Multiplicative] {
        check_policy(&format!("{form:?} wealth"), &policy, END_TO_END, |t, rec| {
            let r = rollout(t, rec, &paths, 0..8, &grid, 1.0, None, 0, form)?;
            t.mean(r.terminal_wealth)
        });
    }
}

pub fn objective_assemblers() {
    let (_, grid, paths) = tiny_market();
    let policy = Policy::new(StrategySpec::new(StrategyKind::Unconstrained), 2, layout(None), 9).unwrap();
    let run = |t: &mut Tape, rec: &frontierlab::strategy::RecordedPolicy<'_>| {
        rollout(t, rec, &paths, 0..8, &grid, 1.0, None, 0, WealthForm::Additive)
    };
    check_policy("mv_direct", &policy, END_TO_END, |t, rec| {
        let r = run(t, rec)?;
        mv_direct(t, r.terminal_wealth, 0.7)
    });
    check_policy("mv_aux", &policy, END_TO_END, |t, rec| {
        let r = run(t, rec)?;
        mv_aux(t, r.terminal_wealth, 1.4)
    });
    check_policy("cvar", &policy, END_TO_END, |t, rec| {
        let r = run(t, rec)?;
        cvar_empirical(t, r.terminal_wealth, 0.75, 1.0)
    });
    check_policy("mean_cvar", &policy, END_TO_END, |t, rec| {
        let r = run(t, rec)?;
        mean_cvar(t, r.terminal_wealth, 0.5, 0.75, 1.0)
    });
    let bounds = Bounds::uniform(2, 0.2, 0.7).unwrap();
    check_policy("penalties", &policy, END_TO_END, |t, rec| {
        let r = run(t, rec)?;
        let a = penalty_local(t, &r.weights, &[0.05, 0.05], 0.1)?;
        let b = penalty_box(t, &r.weights, &bounds, 0.1)?;
        let c = penalty_budget(t, &r.weights, 0.1)?;
        let ab = t.add(a, b)?;
        t.add(ab, c)
    });
}

pub fn projection_layer_off_kinks() {
    let bounds = Bounds::uniform(4, 0.05, 0.6).unwrap();
    let w = NumArray::matrix(4, 2, vec![0.3, 0.1, 0.2, 0.15, 0.25, 0.35, 0.4, 0.2]).unwrap();
    check("project_to_budget", &[w], SMOOTH, |t, x| {
        project_to_budget(t, x[0], &bounds, &[2, 0, 3, 1])
    });
    let z = NumArray::matrix(4, 2, vec![0.2, 0.7, 0.4, 0.1, 0.9, 0.5, 0.3, 0.6]).unwrap();
    check("rescale_to_box", &[z.clone()], SMOOTH, |t, x| rescale_to_box(t, x[0], &bounds));
    check("simplex_weights", &[z], SMOOTH, |t, x| simplex_weights(t, x[0]));
}

fn full_loss(
    t: &mut Tape,
    rec: &frontierlab::strategy::RecordedPolicy<'_>,
    spec: &StrategySpec,
    objective: &ObjectiveSpec,
    paths: &PathBatch,
    grid: &TimeGrid,
    betas: Option<Vec<f64>>,
) -> Result<NodeId> {
    let r = rollout(t, rec, paths, 0..8, grid, 1.0, betas, 3, WealthForm::Additive)?;
    let segments = [LabelSegment {
        start: 0,
        len: 8,
        label: 0.6,
    }];
    assemble_loss(t, objective, spec, &r, &segments, Aggregation::Sum, 1.0)
}

pub fn end_to_end_every_strategy() {
    let (_, grid, paths) = tiny_market();
    let bounds = Bounds::uniform(2, 0.2, 0.8).unwrap();
    let limit = MoveLimit::uniform(2, 0.05).unwrap();
    let cases = [
        (StrategySpec::new(StrategyKind::Unconstrained), PenaltyModel::None),
        (StrategySpec::new(StrategyKind::Simplex).with_bounds(bounds.clone()).with_move_limit(limit.clone()), PenaltyModel::M1),
        (StrategySpec::new(StrategyKind::Incremental).with_bounds(bounds.clone()).with_move_limit(limit.clone()), PenaltyModel::M2),
        (
            StrategySpec::new(StrategyKind::IncrementalClipped).with_bounds(bounds.clone()).with_move_limit(limit.clone()),
            PenaltyModel::M3,
        ),
        (StrategySpec::new(StrategyKind::BoxProjected).with_bounds(bounds.clone()).with_move_limit(limit.clone()), PenaltyModel::M4),
        (
            StrategySpec::new(StrategyKind::Incremental)
                .with_bounds(bounds.clone())
                .with_move_limit(limit.clone())
                .with_initial_weights(InitialWeights::FixedEqual),
            PenaltyModel::M2,
        ),
        (StrategySpec::new(StrategyKind::ConstantMix), PenaltyModel::None),
    ];
    for (i, (spec, model)) in cases.into_iter().enumerate() {
        for criterion in [Criterion::MvDirect, Criterion::MvAux, Criterion::Cvar] {
            let mut objective = ObjectiveSpec::new(criterion).with_penalty(model, 0.05);
            if criterion == Criterion::Cvar {
                objective = objective.with_alpha(0.75);
            }
            let policy = Policy::new(spec.clone(), 2, layout(None), 20 + i as u64).unwrap();
            check_policy(
                &format!("{} {}", spec.kind.name(), criterion.name()),
                &policy,
                END_TO_END,
                |t, rec| full_loss(t, rec, &spec, &objective, &paths, &grid, None),
            );
        }
    }
}

pub fn end_to_end_label_aware_policy() {
    let (_, grid, paths) = tiny_market();
    let spec = StrategySpec::new(StrategyKind::Unconstrained);
    let objective = ObjectiveSpec::new(Criterion::MvDirect);
    let policy = Policy::new(spec.clone(), 2, layout(Some(2.0)), 31).unwrap();
    let betas: Vec<f64> = (0..8).map(|i| 0.2 * i as f64).collect();
    check_policy("label aware", &policy, END_TO_END, |t, rec| {
        full_loss(t, rec, &spec, &objective, &paths, &grid, Some(betas.clone()))
    });
}
