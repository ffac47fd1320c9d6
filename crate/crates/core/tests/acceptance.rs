//! Acceptance criteria, one PASS/FAIL line each.

use std::process::ExitCode;
use std::time::Instant;

use metrise3d_core::expr::{jet_of, Expr};
use metrise3d_core::fixtures;
use metrise3d_core::jet::Jet;
use metrise3d_core::pencil::{classify_subspace, pencil_frames, span_distance, Pencil, PencilError, SubspaceClass};
use metrise3d_core::projective::{extract_pencil, extract_pencil_from, normalize_connection, Christoffel, ConnectionSpec};
use metrise3d_core::solver::{
    compute_phi_psi, decide, exterior_derivative, final_residual, pencil_gate, probe_stencil, CandidateField, ExprField,
    NotMetrisableReason, Options, PencilGate, PipelineField, Verdict,
};
use metrise3d_core::pencil::PencilFrame;
use metrise3d_core::tensor::{Covector, Epsilon, Sym2Contra, Sym2ContraGrad, Tensor3Mixed};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POINTS: [[f64; 3]; 5] = [
    [1.0, 1.0, 1.0],
    [0.7, 1.2, 0.9],
    [1.3, 0.6, 1.1],
    [0.9, 0.8, 1.4],
    [1.2, 1.3, 0.7],
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn e(s: &str) -> Expr {
    s.parse().unwrap()
}

fn eval6(m: &[Expr; 6], p: [f64; 3]) -> [f64; 6] {
    std::array::from_fn(|i| m[i].eval(p).unwrap())
}

fn rand_sym(rng: &mut ChaCha8Rng) -> Sym2Contra<f64> {
    Sym2Contra(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
}

fn jets0(m: &Sym2Contra<f64>) -> Sym2Contra<Jet> {
    m.map(|x| Jet::constant(0, x))
}

/// Largest relative spread of `g_i / reference_i` over the diagonal, and the
/// largest off-diagonal entry relative to the diagonal.
fn proportionality(g: &[f64; 6], reference: &[f64; 6]) -> f64 {
    let ratios: Vec<f64> = [0, 3, 5].iter().map(|&i| g[i] / reference[i]).collect();
    let k = ratios[0];
    let spread = ratios.iter().map(|r| (r / k - 1.0).abs()).fold(0.0, f64::max);
    let diag = [g[0], g[3], g[5]].iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let off = [g[1], g[2], g[4]].iter().fold(0.0f64, |m, x| m.max(x.abs())) / diag;
    spread.max(off)
}

fn criterion_1(spec: &ConnectionSpec) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut points = vec![[1.0, 1.0, 1.0]];
    points.extend((0..10).map(|_| std::array::from_fn(|_| rng.gen_range(0.5..1.5))));
    let printed = fixtures::printed_metric();
    let mut worst = 0.0f64;
    let mut slowest = 0.0f64;
    for p in points {
        let start = Instant::now();
        let d = decide(spec, p, &Options::default()).unwrap();
        slowest = slowest.max(start.elapsed().as_secs_f64());
        let Verdict::Metrisable { solution, .. } = &d.verdict else {
            return outcome(false, format!("{p:?}: verdict {}", d.verdict.name()));
        };
        for m in &solution.metric {
            worst = worst.max(proportionality(&m.g, &eval6(&printed, m.point)));
        }
    }
    outcome(
        worst < 1e-6 && slowest < 2.0,
        format!("11 base points Metrisable; metric proportionality {worst:.1e}; slowest point {slowest:.2} s"),
    )
}

fn criterion_2(spec: &ConnectionSpec) -> Outcome {
    let printed = fixtures::printed_weyl();
    let mut worst = 0.0f64;
    let mut q = 0.0f64;
    for p in POINTS {
        let f = normalize_connection(spec, p, 0).unwrap();
        let mut scale = 0.0f64;
        let mut diff = 0.0f64;
        for (c, row) in printed.iter().enumerate() {
            for (slot, (a, b)) in [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)].into_iter().enumerate() {
                let want = row[slot].eval(p).unwrap();
                scale = scale.max(want.abs());
                diff = diff.max((f.weyl.get(a, b, c).value() - want).abs());
            }
        }
        worst = worst.max(diff / scale);
        q = q.max(f.q_relative());
    }
    outcome(worst < 1e-9 && q < 1e-10, format!("V relative error {worst:.1e}; |Q| relative {q:.1e}"))
}

fn criterion_3(spec: &ConnectionSpec) -> Outcome {
    let p = [1.0, 1.0, 1.0];
    let f = normalize_connection(spec, p, 3).unwrap();
    let pencil = Pencil::from_span(&extract_pencil(&f).unwrap(), 1e-9).unwrap();
    let (frames, skipped) = pencil_frames(&pencil).unwrap();
    // independent count: real generalized eigenvalues of the printed pair
    let (rho, sigma) = fixtures::printed_pencil();
    let (r, s) = (Sym2Contra(eval6(&rho, p)), Sym2Contra(eval6(&sigma, p)));
    let m = |x: &Sym2Contra<f64>| nalgebra::Matrix3::from_fn(|a, b| x.get(a, b));
    let ev = (m(&s).try_inverse().unwrap() * m(&r)).complex_eigenvalues();
    let real_roots = ev.iter().filter(|z| z.im.abs() < 1e-9 * z.norm()).count();
    let printed_branch: Vec<&PencilFrame> = frames
        .iter()
        .filter(|fr| {
            let x = fr.xi.0.map(|j| j.value());
            (x[0] - 1.0).abs() < 1e-10 && x[1].abs() < 1e-10 && x[2].abs() < 1e-10
        })
        .collect();
    let fixture_ok = skipped.is_empty()
        && frames.len() == real_roots
        && printed_branch.len() == 1
        && frames.iter().all(|fr| fr.satisfies_normal_form(1e-12, 1e-10));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut regular, mut counts_ok, mut wlg_ok, mut worst) = (0, true, true, 0.0f64);
    while regular < 200 {
        let (a, mut b) = (rand_sym(&mut rng), rand_sym(&mut rng));
        if b.det().abs() < 1e-3 {
            b = b + Sym2Contra::identity_like(1.0);
        }
        let pencil = match Pencil::new(&jets0(&a), &jets0(&b), 1e-9) {
            Ok(p) => p,
            Err(PencilError::Irregular { .. }) => continue,
            Err(e) => return outcome(false, format!("random pencil failed: {e}")),
        };
        regular += 1;
        let (frames, skipped) = pencil_frames(&pencil).unwrap();
        counts_ok &= skipped.is_empty() && (frames.len() == 1 || frames.len() == 3);
        for fr in &frames {
            let [_, t, k] = fr.normal_form_residuals();
            worst = worst.max(t).max(k);
            wlg_ok &= fr.satisfies_normal_form(1e-12, 1e-10);
        }
    }
    outcome(
        fixture_ok && counts_ok && wlg_ok,
        format!(
            "fixture: {} real branches ({} real roots), one with ξ = (1,0,0); 200 random pencils: counts in {{1,3}} = {counts_ok}, worst (WLG) residual {worst:.1e}",
            frames.len(),
            real_roots
        ),
    )
}

fn printed_frame(p: [f64; 3], order: usize) -> PencilFrame {
    let (rho, sigma, xi) = fixtures::printed_normal_form();
    let j = |x: &Expr| x.eval_jet(p, order).unwrap();
    PencilFrame {
        rho: Sym2Contra(rho.each_ref().map(j)),
        sigma: Sym2Contra(sigma.each_ref().map(j)),
        xi: Covector(xi.each_ref().map(j)),
        branch: 0,
    }
}

fn criterion_4(spec: &ConnectionSpec) -> Outcome {
    let (phi, psi) = (e(fixtures::PRINTED_PHI), e(fixtures::PRINTED_PSI));
    let mut worst = 0.0f64;
    for p in POINTS {
        let pp = compute_phi_psi(&printed_frame(p, 2), &spec.normalized_jets(p, 2).unwrap()).unwrap();
        let (a, b) = (phi.eval(p).unwrap(), psi.eval(p).unwrap());
        worst = worst
            .max((pp.phi.value() - a).abs() / a.abs())
            .max((pp.psi.value() - b).abs() / b.abs());
    }
    outcome(worst < 1e-9, format!("φ, ψ relative error {worst:.1e} at 5 points"))
}

fn printed_candidate(spec: &ConnectionSpec) -> ExprField {
    ExprField {
        gamma: spec.normalized().clone(),
        sigma: [
            "2*x^2/(1 + x^2)^4",
            "0",
            "0",
            "2*x^2*(x*y + z)^2*z^2/(1 + x^2)^4",
            "0",
            "2*x^2*(x*y + z)^2*z^2/(1 + x^2)^4",
        ]
        .map(e),
        epsilon: spec.epsilon().clone(),
    }
}

fn criterion_5(spec: &ConnectionSpec) -> Outcome {
    let field = printed_candidate(spec);
    let pot = e(fixtures::PRINTED_OMEGA_POTENTIAL);
    let (mut w_err, mut curl, mut residual) = (0.0f64, 0.0f64, 0.0f64);
    for p in POINTS {
        let (s, w) = field.omega(p, 1).unwrap();
        let g = jet_of(&pot, p, 1).unwrap().gradient();
        let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for a in 0..3 {
            w_err = w_err.max((w.0[a].value() - g[a]).abs() / gmax);
        }
        curl = curl.max(exterior_derivative(&w).0);
        residual = residual.max(final_residual(&s.sigma_hat, &w, &s.gamma));
    }
    // the pipeline's own candidate, over the probe stencil of each point
    let mut pipeline_curl = 0.0f64;
    for p in POINTS {
        let d = decide(spec, p, &Options::default()).unwrap();
        let Verdict::Metrisable { solution, .. } = &d.verdict else {
            return outcome(false, format!("{p:?}: verdict {}", d.verdict.name()));
        };
        let field = PipelineField {
            spec,
            reference: solution.sigma_hat.values(),
            tol: 1e-9,
            gauge: None,
        };
        let mut stencil = vec![p];
        stencil.extend(probe_stencil(p, 0.25));
        for q in stencil {
            let (s, w) = field.omega(q, 1).unwrap();
            pipeline_curl = pipeline_curl.max(exterior_derivative(&w).0);
            residual = residual.max(final_residual(&s.sigma_hat, &w, &s.gamma));
        }
    }
    outcome(
        w_err < 1e-9 && curl < 1e-10 && pipeline_curl < 1e-10 && residual < 1e-8,
        format!(
            "ω error {w_err:.1e}; |dω| {curl:.1e} (printed σ̂), {pipeline_curl:.1e} (pipeline σ̂); final residual {residual:.1e}"
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut q_worst, mut span_worst) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let (r, s) = (rand_sym(&mut rng), rand_sym(&mut rng));
        let eps = rng.gen_range(0.5..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let v = Tensor3Mixed::wedge(&r, &s, &Epsilon::new(eps));
        let q = v.plucker_square(&Epsilon::new(eps)).max_abs_value() / (eps.abs() * v.max_abs_value().powi(2));
        q_worst = q_worst.max(q);
        let vj = Tensor3Mixed::wedge(&jets0(&r), &jets0(&s), &Epsilon::new(Jet::constant(0, eps)));
        match extract_pencil_from(&vj, &Epsilon::new(Jet::constant(0, eps))) {
            Ok(span) => {
                let d = span_distance((&span.rho_raw.values(), &span.sigma_raw.values()), (&r, &s));
                span_worst = span_worst.max(d);
            }
            Err(_) => span_worst = f64::INFINITY,
        }
    }
    let mut nonzero = 0;
    for _ in 0..500 {
        let eps = Epsilon::new(1.0);
        let v = Tensor3Mixed::wedge(&rand_sym(&mut rng), &rand_sym(&mut rng), &eps)
            + Tensor3Mixed::wedge(&rand_sym(&mut rng), &rand_sym(&mut rng), &eps);
        let q = v.plucker_square(&eps).max_abs_value() / v.max_abs_value().powi(2);
        if q > 1e-6 {
            nonzero += 1;
        }
    }
    outcome(
        q_worst < 1e-10 && span_worst < 1e-8 && nonzero >= 495,
        format!("simple: |Q| {q_worst:.1e}, span distance {span_worst:.1e}; non-simple: {nonzero}/500 with |Q| > 1e-6"),
    )
}

fn criterion_7() -> Outcome {
    let flat = ConnectionSpec::parse(&[[["0"; 3]; 3]; 3], None).unwrap();
    let flat_ok = matches!(
        decide(&flat, [0.3, -0.2, 0.5], &Options::default()).unwrap().verdict,
        Verdict::ProjectivelyFlat
    );

    let mut g = fixtures::EXAMPLE_GAMMA.map(|p| p.map(|r| r.map(String::from)));
    g[0][0][1] = format!("{} + 0.1*x", g[0][0][1]);
    let refs: [[[&str; 3]; 3]; 3] =
        std::array::from_fn(|a| std::array::from_fn(|b| std::array::from_fn(|c| g[a][b][c].as_str())));
    let perturbed = ConnectionSpec::parse(&refs, Some(fixtures::EXAMPLE_EPSILON)).unwrap();
    let runs: Vec<_> = (0..2)
        .map(|_| decide(&perturbed, [1.0, 1.0, 1.0], &Options::default()).unwrap())
        .collect();
    let gate = runs[0].verdict.reason();
    let perturbed_ok = matches!(runs[0].verdict, Verdict::NotMetrisable(NotMetrisableReason::QNonzero))
        && runs[0].diagnostics == runs[1].diagnostics
        && runs[0].verdict.reason() == runs[1].verdict.reason();

    // V = ρ ∧ σ with ρ, σ in the W1 family
    let rho = Sym2Contra([1.0, 0.5, 0.0, -0.3, 0.0, 0.0]);
    let sigma = Sym2Contra([0.2, -1.0, 0.0, 0.7, 0.0, 0.0]);
    let eps = Epsilon::new(Jet::constant(0, 1.0));
    let v = Tensor3Mixed::wedge(&jets0(&rho), &jets0(&sigma), &eps);
    let degenerate_ok = matches!(pencil_gate(&v, &eps, 1e-9), PencilGate::EntirelyDegenerate);
    outcome(
        flat_ok && perturbed_ok && degenerate_ok,
        format!(
            "flat → ProjectivelyFlat: {flat_ok}; perturbed → {} ({}) twice, identical diagnostics: {perturbed_ok}; W1 pencil → PencilEntirelyDegenerate: {degenerate_ok}",
            runs[0].verdict.name(),
            gate.unwrap_or_default()
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 1000 {
        let s = rand_sym(&mut rng);
        let Ok(inv) = s.inverse() else { continue };
        if s.det().abs() < 1e-2 {
            continue;
        }
        done += 1;
        let theta = Covector(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
        let lhs = Sym2ContraGrad::outer(&theta, &s).tracefree().contract_pair(&inv);
        let scale = theta.0.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for a in 0..3 {
            worst = worst.max((lhs.0[a] - 2.5 * theta.0[a]).abs() / scale);
        }
    }
    outcome(worst < 1e-12, format!("max deviation {worst:.1e} over 1000 draws"))
}

fn criterion_9() -> Outcome {
    let w1 = [
        Sym2Contra([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        Sym2Contra([0.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
        Sym2Contra([0.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
    ];
    let w2 = [
        Sym2Contra([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        Sym2Contra([0.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
        Sym2Contra([0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
    ];
    let w1_ok = matches!(classify_subspace(&w1, 1e-9), SubspaceClass::W1(k) if k == [0.0, 0.0, 1.0]);
    let w2_ok = matches!(classify_subspace(&w2, 1e-9), SubspaceClass::W2(t) if t == [1.0, 0.0, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let random_ok = (0..100).all(|_| {
        let b = [rand_sym(&mut rng), rand_sym(&mut rng), rand_sym(&mut rng)];
        classify_subspace(&b, 1e-9) == SubspaceClass::NotDegenerate
    });
    outcome(w1_ok && w2_ok && random_ok, format!("W1 {w1_ok}, W2 {w2_ok}, 100 random spans NotDegenerate {random_ok}"))
}

/// Compares jet gradients at `p` with central differences of values at
/// `p ± h e_i`; errors are relative to the largest derivative or value in
/// the family.
struct FdCheck {
    worst: f64,
    families: Vec<(String, f64)>,
}

impl FdCheck {
    fn family(&mut self, name: &str, jets: &[Jet], values: impl Fn([f64; 3]) -> Vec<f64>, p: [f64; 3]) {
        const H: f64 = 1e-4;
        let mut fd = vec![[0.0; 3]; jets.len()];
        for i in 0..3 {
            let (mut plus, mut minus) = (p, p);
            plus[i] += H;
            minus[i] -= H;
            let (vp, vm) = (values(plus), values(minus));
            for (k, d) in fd.iter_mut().enumerate() {
                d[i] = (vp[k] - vm[k]) / (2.0 * H);
            }
        }
        // a constant quantity has vanishing derivatives; fall back to its size
        let scale = fd
            .iter()
            .flatten()
            .copied()
            .chain(jets.iter().map(Jet::value))
            .fold(0.0f64, |m, x| m.max(x.abs()));
        let err = jets
            .iter()
            .zip(&fd)
            .flat_map(|(j, d)| (0..3).map(move |i| (j.gradient()[i] - d[i]).abs()))
            .fold(0.0f64, f64::max)
            / scale.max(f64::MIN_POSITIVE);
        self.worst = self.worst.max(err);
        self.families.push((name.to_string(), err));
    }
}

fn closest_frame(frames: &[PencilFrame], reference: &Sym2Contra<f64>) -> PencilFrame {
    frames
        .iter()
        .max_by(|a, b| {
            let oa = a.rho.values().frobenius_dot(reference).abs();
            let ob = b.rho.values().frobenius_dot(reference).abs();
            oa.total_cmp(&ob)
        })
        .unwrap()
        .clone()
}

fn criterion_10(spec: &ConnectionSpec) -> Outcome {
    let p = [1.1, 0.9, 1.2];
    let k = 3;
    let mut check = FdCheck {
        worst: 0.0,
        families: Vec::new(),
    };
    let flat_gamma = |g: &Christoffel<Jet>| -> Vec<Jet> { g.iter().flatten().flatten().copied().collect() };
    let frame = normalize_connection(spec, p, k).unwrap();
    check.family(
        "Γ̂",
        &flat_gamma(&frame.gamma),
        |q| spec.normalized_values(q).unwrap().iter().flatten().flatten().copied().collect(),
        p,
    );
    check.family(
        "V",
        &frame.weyl.components().copied().collect::<Vec<_>>(),
        |q| normalize_connection(spec, q, 0).unwrap().weyl.values().components().copied().collect(),
        p,
    );

    let frames_at = |q: [f64; 3], order: usize| {
        let f = normalize_connection(spec, q, order).unwrap();
        let pencil = Pencil::from_span(&extract_pencil(&f).unwrap(), 1e-9).unwrap();
        (f, pencil_frames(&pencil).unwrap().0)
    };
    let (_, base_frames) = frames_at(p, k);
    for (b, base) in base_frames.iter().enumerate() {
        let reference = base.rho.values();
        let value_frame = |q: [f64; 3]| closest_frame(&frames_at(q, 0).1, &reference);
        check.family(&format!("ρ[{b}]"), &base.rho.0, |q| value_frame(q).rho.values().0.to_vec(), p);
        check.family(&format!("σ[{b}]"), &base.sigma.0, |q| value_frame(q).sigma.values().0.to_vec(), p);
        check.family(&format!("ξ[{b}]"), &base.xi.0, |q| value_frame(q).xi.0.map(|j| j.value()).to_vec(), p);
        let pp = compute_phi_psi(base, &frame.gamma).unwrap();
        check.family(
            &format!("φ,ψ[{b}]"),
            &[pp.phi, pp.psi],
            |q| {
                let (f, frames) = frames_at(q, 1);
                let pp = compute_phi_psi(&closest_frame(&frames, &reference), &f.gamma).unwrap();
                vec![pp.phi.value(), pp.psi.value()]
            },
            p,
        );
    }

    let d = decide(spec, p, &Options::default()).unwrap();
    let Verdict::Metrisable { solution, .. } = &d.verdict else {
        return outcome(false, "fixture not metrisable at the check point");
    };
    let field = PipelineField {
        spec,
        reference: solution.sigma_hat.values(),
        tol: 1e-9,
        gauge: None,
    };
    let (s, w) = field.omega(p, 1).unwrap();
    check.family("σ̂", &s.sigma_hat.0, |q| field.sample(q, 0).unwrap().sigma_hat.values().0.to_vec(), p);
    check.family("ω", &w.0, |q| field.omega(q, 0).unwrap().1 .0.map(|j| j.value()).to_vec(), p);
    check.family(
        "g",
        &solution.metric_jet.0,
        |q| {
            let mut o = Options::default();
            o.metric_points = vec![q];
            let d = decide(spec, p, &o).unwrap();
            let Verdict::Metrisable { solution, .. } = d.verdict else { unreachable!() };
            solution.metric.last().unwrap().g.to_vec()
        },
        p,
    );
    let worst_family = check
        .families
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .unwrap_or_default();
    outcome(
        check.worst < 1e-5,
        format!("{} quantity families; worst {worst_family}", check.families.len()),
    )
}

fn main() -> ExitCode {
    let spec = fixtures::example_connection();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("golden fixture end-to-end", Box::new(|| criterion_1(&spec))),
        ("Weyl tensor and Q", Box::new(|| criterion_2(&spec))),
        ("pencil stage", Box::new(|| criterion_3(&spec))),
        ("φ and ψ", Box::new(|| criterion_4(&spec))),
        ("scale stage", Box::new(|| criterion_5(&spec))),
        ("Plücker properties", Box::new(criterion_6)),
        ("negative controls", Box::new(criterion_7)),
        ("trace-free identity", Box::new(criterion_8)),
        ("degenerate subspace classifier", Box::new(criterion_9)),
        ("jets against finite differences", Box::new(|| criterion_10(&spec))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| outcome(false, "panicked"));
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {status}: {name}: {}", i + 1, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
