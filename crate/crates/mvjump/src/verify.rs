//! The full cross-validation suite bundled into one deterministic,
//! serializable report: ODE residuals, agreement of the two solution routes,
//! the relationship identities, frontier formula equivalence, Monte Carlo
//! moment and utility checks, the policy-perturbation audit, and a
//! closed-form variant audit that prints alternative readings of the
//! solution formulas next to the integrator's values.

use crate::control::{verify_mp_dpp, FeedbackPolicy, MpDppReport, ValueFunction};
use crate::error::Result;
use crate::frontier::{recursive_variance_grid, resolve_beta, variance_curve};
use crate::grid::{GridSpec, SolutionGrid};
use crate::market::MarketModel;
use crate::odes::{
    closed_form_phi, eval_c, solve_mean, solve_p, solve_phi, solve_psi, solve_q, solve_r_variant,
    solve_second_moment, EmbeddingParams, RSourceVariant,
};
use crate::sim::{
    estimate_y0, perturbation_optimality_check, sample_path_states, simulate, PerturbationReport,
    SimConfig,
};
use serde::Serialize;

/// Everything the suite needs to run.
#[derive(Debug, Clone)]
pub struct VerifyInputs<'a> {
    pub model: &'a MarketModel,
    pub w: f64,
    pub gamma: f64,
    pub x0: f64,
    pub n_ode: usize,
    pub sim: SimConfig,
    pub eps_grid: Vec<f64>,
}

pub const DEFAULT_EPS_GRID: [f64; 6] = [-0.2, -0.1, -0.05, 0.05, 0.1, 0.2];

#[derive(Debug, Clone, Serialize)]
pub struct InputEcho {
    pub horizon: f64,
    pub w: f64,
    pub gamma: f64,
    pub x0: f64,
    pub beta: f64,
    pub n_ode: usize,
    pub sim: SimConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualCheck {
    pub equation: String,
    pub max_normalized_residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct OdeResiduals {
    pub tolerance: f64,
    pub checks: Vec<ResidualCheck>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RouteAgreement {
    pub max_abs_phi_minus_p: f64,
    pub max_abs_psi_minus_q: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrontierEquivalence {
    pub max_abs_variance_diff: f64,
    pub variance_tolerance: f64,
    pub max_bracket_residual: f64,
    pub bracket_tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct McMoments {
    pub ode_mean: f64,
    pub mc_mean: f64,
    pub se_mean: f64,
    pub z_mean: f64,
    pub ode_var: f64,
    pub mc_var: f64,
    pub se_var: f64,
    pub z_var: f64,
    pub excluded_paths: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RVariantAudit {
    pub shifted_square: bool,
    pub negative_coupling: bool,
    pub v0: f64,
    pub predicted_y0: f64,
    pub gap_vs_mc: f64,
    pub z: f64,
    pub verdict: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecursiveUtility {
    pub y0_hat: f64,
    pub se_y0: f64,
    pub v0: f64,
    pub z: f64,
    /// All four readings of the R equation source term, each compared
    /// against the same Monte Carlo estimate.
    pub r_variants: Vec<RVariantAudit>,
    pub pass: bool,
}

/// Alternative readings of the closed-form displays, printed next to the
/// integrator's values so the choice of form can be audited. The
/// variation-of-constants forms are the ones that solve the equations; the
/// `*_variant` fields evaluate the other readings (inner integral running to
/// the fixed upper limit instead of the quadrature variable; inner exponent
/// carrying `-2 rho` instead of `-rho`).
#[derive(Debug, Clone, Serialize)]
pub struct ClosedFormAudit {
    pub psi0_integrated: f64,
    pub psi0_variation_of_constants: f64,
    pub psi0_outer_upper_limit_variant: f64,
    pub psi0_inner_exponent_variant: f64,
    pub mean_t_integrated: f64,
    pub mean_t_variation_of_constants: f64,
    pub mean_t_outer_upper_limit_variant: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EmbeddingCheck {
    pub residual: f64,
    pub residual_tolerance: f64,
    pub lambda_embed: f64,
    pub lambda_identity_residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
    pub inputs: InputEcho,
    pub ode_residuals: OdeResiduals,
    pub route_agreement: RouteAgreement,
    pub relationship: MpDppReport,
    pub frontier_equivalence: FrontierEquivalence,
    pub mc_moments: McMoments,
    pub recursive_utility: RecursiveUtility,
    pub perturbation: PerturbationReport,
    pub closed_form_audit: ClosedFormAudit,
    pub embedding: EmbeddingCheck,
    pub pass: bool,
}

impl VerifyReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One line per section, for terminal output.
    pub fn summary_lines(&self) -> Vec<String> {
        let mark = |p: bool| if p { "PASS" } else { "FAIL" };
        vec![
            format!("{} ode_residuals", mark(self.ode_residuals.pass)),
            format!("{} route_agreement", mark(self.route_agreement.pass)),
            format!("{} relationship", mark(self.relationship.pass)),
            format!("{} frontier_equivalence", mark(self.frontier_equivalence.pass)),
            format!("{} mc_moments", mark(self.mc_moments.pass)),
            format!("{} recursive_utility", mark(self.recursive_utility.pass)),
            format!("{} perturbation", mark(self.perturbation.pass)),
            format!("{} embedding", mark(self.embedding.pass)),
            format!("{} overall", mark(self.pass)),
        ]
    }
}

/// Composite Simpson rule with an even panel count.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    debug_assert!(panels >= 2 && panels % 2 == 0);
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / panels as f64;
    let mut acc = f(a) + f(b);
    for k in 1..panels {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

const AUDIT_PANELS: usize = 8192;

struct Solved {
    spec: GridSpec,
    params: EmbeddingParams,
    phi: SolutionGrid,
    psi: SolutionGrid,
    p: SolutionGrid,
    q: SolutionGrid,
    r: SolutionGrid,
    mean: SolutionGrid,
    second: SolutionGrid,
    beta_residual: f64,
}

fn solve_all(inputs: &VerifyInputs) -> Result<Solved> {
    let spec = GridSpec::aligned_to_model(inputs.model, inputs.n_ode)?;
    let resolution = resolve_beta(inputs.model, inputs.w, inputs.gamma, inputs.x0, spec)?;
    let params = EmbeddingParams::new(inputs.w, resolution.beta, inputs.gamma, inputs.x0)?;
    let phi = solve_phi(inputs.model, &params, spec)?;
    let psi = solve_psi(inputs.model, &params, &phi, spec)?;
    let p = solve_p(inputs.model, &params, spec)?;
    let q = solve_q(inputs.model, &params, &p, spec)?;
    let r = solve_r_variant(inputs.model, &params, &p, &q, spec, RSourceVariant::CONSISTENT)?;
    let mean = solve_mean(inputs.model, &params, &psi, spec)?;
    let second = solve_second_moment(inputs.model, &params, &psi, spec)?;
    Ok(Solved {
        spec,
        params,
        phi,
        psi,
        p,
        q,
        r,
        mean,
        second,
        beta_residual: resolution.residual,
    })
}

fn residual_section(model: &MarketModel, s: &Solved) -> OdeResiduals {
    let rates = model.rates();
    let params = s.params;
    let sw = params.sqrt_w();
    let gamma = params.gamma;
    let interior_breaks: Vec<f64> =
        rates.breakpoints[1..rates.breakpoints.len() - 1].to_vec();
    let h = s.spec.h();

    let phi = &s.phi;
    let psi = &s.psi;
    let p = &s.p;
    let q = &s.q;
    let shift = 1.0 / sw;
    let checks: Vec<(&str, &SolutionGrid, Box<dyn Fn(f64, f64) -> f64>)> = vec![
        (
            "phi",
            &s.phi,
            Box::new(|t, x| (rates.theta_at(t) - 2.0 * rates.rho_at(t) + gamma) * x),
        ),
        (
            "psi",
            &s.psi,
            Box::new(|t, x| {
                let rho = rates.rho_at(t);
                let theta = rates.theta_at(t);
                (theta - rho + gamma) * x - sw * params.beta * rho * phi.value(t).unwrap()
                    + (rho - theta) / sw
            }),
        ),
        (
            "value_gain",
            &s.p,
            Box::new(|t, x| (rates.theta_at(t) + gamma - 2.0 * rates.rho_at(t)) * x),
        ),
        (
            "value_shift",
            &s.q,
            Box::new(|t, x| {
                let rho = rates.rho_at(t);
                let theta = rates.theta_at(t);
                (theta + gamma - rho) * x - sw * params.beta * rho * p.value(t).unwrap()
                    + rho / sw
                    - theta / sw
            }),
        ),
        (
            "value_offset",
            &s.r,
            Box::new(|t, x| {
                let rho = rates.rho_at(t);
                let theta = rates.theta_at(t);
                let qv = q.value(t).unwrap();
                let pv = p.value(t).unwrap();
                let dq = qv - shift;
                gamma * x + rho * params.beta - sw * params.beta * rho * qv
                    + theta * dq * dq / (2.0 * pv)
            }),
        ),
        (
            "mean",
            &s.mean,
            Box::new(|t, x| {
                let theta = rates.theta_at(t);
                (rates.rho_at(t) - theta) * x
                    - theta * eval_c(model, &params, psi, t).unwrap()
            }),
        ),
        (
            "second_moment",
            &s.second,
            Box::new(|t, x| {
                let theta = rates.theta_at(t);
                let c = eval_c(model, &params, psi, t).unwrap();
                (2.0 * rates.rho_at(t) - theta) * x + theta * c * c
            }),
        ),
    ];

    let tolerance = 1e-6;
    let mut out = Vec::with_capacity(checks.len());
    for (name, grid, rhs) in checks {
        let mut worst = 0.0f64;
        for i in 1..s.spec.n {
            let t = s.spec.node(i);
            if interior_breaks.iter().any(|&b| (t - b).abs() <= 1.5 * h) {
                continue;
            }
            let fd = (grid.values[i + 1] - grid.values[i - 1]) / (2.0 * h);
            let f = rhs(t, grid.values[i]);
            let normalized = (fd - f).abs() / (1.0 + f.abs());
            worst = worst.max(normalized);
        }
        out.push(ResidualCheck {
            equation: name.to_string(),
            max_normalized_residual: worst,
            pass: worst <= tolerance,
        });
    }
    let pass = out.iter().all(|c| c.pass);
    OdeResiduals { tolerance, checks: out, pass }
}

fn closed_form_audit(model: &MarketModel, s: &Solved) -> ClosedFormAudit {
    let rates = model.rates();
    let params = s.params;
    let sw = params.sqrt_w();
    let gamma = params.gamma;
    let t_end = rates.t_end();

    // psi(0) via variation of constants:
    // int_0^T exp(-int_0^s (theta - rho + gamma)) [sw beta rho phi + (theta - rho)/sw] ds
    let voc = simpson(
        |u| {
            let rho = rates.rho_at(u);
            let theta = rates.theta_at(u);
            let inner = rates.integral_combo(0.0, u, -1.0, 1.0, gamma);
            (sw * params.beta * rho * closed_form_phi(model, &params, u).unwrap()
                + (theta - rho) / sw)
                * (-inner).exp()
        },
        0.0,
        t_end,
        AUDIT_PANELS,
    );

    // beta block shared by the displayed variants
    let beta_block = sw
        * params.beta
        * ((-rates.integral_combo(0.0, t_end, -2.0, 1.0, gamma)).exp()
            - (-rates.integral_combo(0.0, t_end, -1.0, 1.0, gamma)).exp());

    // variant with the inner integral running to the fixed upper limit: the
    // exponential factor is then constant in s and multiplies the plain
    // integral of (theta - rho)
    let outer_t = beta_block
        + (-rates.integral_combo(0.0, t_end, -2.0, 1.0, gamma)).exp() / sw
            * rates.integral_combo(0.0, t_end, -1.0, 1.0, 0.0);

    // variant with inner exponent carrying -2 rho instead of -rho
    let inner_exp = beta_block
        + simpson(
            |u| {
                let inner = rates.integral_combo(0.0, u, -2.0, 1.0, gamma);
                (rates.theta_at(u) - rates.rho_at(u)) / sw * (-inner).exp()
            },
            0.0,
            t_end,
            AUDIT_PANELS,
        );

    // terminal mean via variation of constants:
    // exp(int_0^T (rho - theta)) x0 - int_0^T theta C exp(int_s^T (rho - theta)) ds
    let full = rates.integral_combo(0.0, t_end, 1.0, -1.0, 0.0);
    let mean_voc = full.exp() * params.x0
        - simpson(
            |u| {
                let tail = full - rates.integral_combo(0.0, u, 1.0, -1.0, 0.0);
                rates.theta_at(u)
                    * eval_c(model, &params, &s.psi, u).unwrap()
                    * tail.exp()
            },
            0.0,
            t_end,
            AUDIT_PANELS,
        );

    // variant with the inner exponential frozen at the upper limit: the
    // prefactor cancels and the integral term loses its weight entirely
    let mean_outer_t = full.exp() * params.x0
        - simpson(
            |u| rates.theta_at(u) * eval_c(model, &params, &s.psi, u).unwrap(),
            0.0,
            t_end,
            AUDIT_PANELS,
        );

    ClosedFormAudit {
        psi0_integrated: s.psi.first(),
        psi0_variation_of_constants: voc,
        psi0_outer_upper_limit_variant: outer_t,
        psi0_inner_exponent_variant: inner_exp,
        mean_t_integrated: s.mean.last(),
        mean_t_variation_of_constants: mean_voc,
        mean_t_outer_upper_limit_variant: mean_outer_t,
    }
}

/// Runs the whole suite. Deterministic for fixed inputs: two invocations
/// produce byte-identical JSON.
pub fn build_report(inputs: &VerifyInputs) -> Result<VerifyReport> {
    let model = inputs.model;
    let s = solve_all(inputs)?;
    let params = s.params;

    let ode_residuals = residual_section(model, &s);

    let route_agreement = {
        let dp = s.phi.max_abs_diff(&s.p);
        let dq = s.psi.max_abs_diff(&s.q);
        let tolerance = 1e-10;
        RouteAgreement {
            max_abs_phi_minus_p: dp,
            max_abs_psi_minus_q: dq,
            tolerance,
            pass: dp <= tolerance && dq <= tolerance,
        }
    };

    let policy =
        FeedbackPolicy::mp(model, params, s.phi.clone(), s.psi.clone())?;
    let value = ValueFunction::new(params, s.p.clone(), s.q.clone(), s.r.clone())?;

    let relationship = {
        let states = sample_path_states(model, &params, &policy, &inputs.sim, 64)?;
        verify_mp_dpp(&policy, &value, &states)?
    };

    let frontier_equivalence = {
        let direct = variance_curve(&s.mean, &s.second)?;
        let dynamic = recursive_variance_grid(model, &params, &s.mean, &s.psi)?;
        let max_diff = direct.max_abs_diff(&dynamic);
        let rates = model.rates();
        let mut bracket_worst = 0.0f64;
        for k in 0..100 {
            let t = s.spec.node(k * s.spec.n / 100);
            let m = s.mean.value(t)?;
            let c = eval_c(model, &params, &s.psi, t)?;
            let theta = rates.theta_at(t);
            let rho = rates.rho_at(t);
            let d_mean = (rho - theta) * m - theta * c;
            bracket_worst = bracket_worst.max(((rho - theta) * m - d_mean - theta * c).abs());
        }
        FrontierEquivalence {
            max_abs_variance_diff: max_diff,
            variance_tolerance: 1e-9,
            max_bracket_residual: bracket_worst,
            bracket_tolerance: 1e-10,
            pass: max_diff <= 1e-9 && bracket_worst <= 1e-10,
        }
    };

    let ensemble = simulate(model, &params, &policy, &inputs.sim)?;
    let mc_moments = {
        let ode_mean = s.mean.last();
        let ode_var = variance_curve(&s.mean, &s.second)?.last();
        let su = &ensemble.summary;
        let z_mean = (su.mean_t - ode_mean).abs() / su.se_mean;
        let z_var = (su.var_t - ode_var).abs() / su.se_var;
        McMoments {
            ode_mean,
            mc_mean: su.mean_t,
            se_mean: su.se_mean,
            z_mean,
            ode_var,
            mc_var: su.var_t,
            se_var: su.se_var,
            z_var,
            excluded_paths: su.excluded_paths,
            pass: z_mean <= 3.0 && z_var <= 3.0 && su.excluded_paths == 0,
        }
    };

    let recursive_utility = {
        let (y0_hat, se_y0) = estimate_y0(&ensemble);
        let y0 = params.y0();
        let v_of = |r: &SolutionGrid| {
            0.5 * s.p.first() * y0 * y0 + s.q.first() * y0 + r.first()
        };
        let v0 = v_of(&s.r);
        let z = (y0_hat - (-v0)).abs() / se_y0;
        let variants = [
            RSourceVariant::CONSISTENT,
            RSourceVariant { shifted_square: true, negative_coupling: false },
            RSourceVariant { shifted_square: false, negative_coupling: true },
            RSourceVariant::AS_DISPLAYED,
        ];
        let mut audits = Vec::with_capacity(variants.len());
        for variant in variants {
            let r_v = solve_r_variant(model, &params, &s.p, &s.q, s.spec, variant)?;
            let v0_v = v_of(&r_v);
            let gap = y0_hat - (-v0_v);
            let z_v = gap.abs() / se_y0;
            let verdict = if variant == RSourceVariant::CONSISTENT {
                "implemented".to_string()
            } else if (v0_v - v0).abs() <= 1e-12 {
                "identical to the implemented form at these parameters".to_string()
            } else if z_v > 3.0 {
                "rejected by the Monte Carlo estimate".to_string()
            } else {
                "not rejected by the Monte Carlo estimate".to_string()
            };
            audits.push(RVariantAudit {
                shifted_square: variant.shifted_square,
                negative_coupling: variant.negative_coupling,
                v0: v0_v,
                predicted_y0: -v0_v,
                gap_vs_mc: gap,
                z: z_v,
                verdict,
            });
        }
        RecursiveUtility { y0_hat, se_y0, v0, z, r_variants: audits, pass: z <= 3.0 }
    };

    let perturbation =
        perturbation_optimality_check(model, &params, &policy, &inputs.sim, &inputs.eps_grid)?;

    let closed_form_audit = closed_form_audit(model, &s);

    let embedding = {
        let mean_t = s.mean.last();
        let lambda = 1.0 + 2.0 * params.w * mean_t;
        let lambda_residual = (params.beta - lambda / (2.0 * params.w)).abs();
        EmbeddingCheck {
            residual: s.beta_residual,
            residual_tolerance: 1e-9,
            lambda_embed: lambda,
            lambda_identity_residual: lambda_residual,
            pass: s.beta_residual <= 1e-9 && lambda_residual <= 1e-9,
        }
    };

    let pass = ode_residuals.pass
        && route_agreement.pass
        && relationship.pass
        && frontier_equivalence.pass
        && mc_moments.pass
        && recursive_utility.pass
        && perturbation.pass
        && embedding.pass;

    Ok(VerifyReport {
        schema_version: 1,
        generated_at: None,
        inputs: InputEcho {
            horizon: model.horizon,
            w: inputs.w,
            gamma: inputs.gamma,
            x0: inputs.x0,
            beta: params.beta,
            n_ode: s.spec.n,
            sim: inputs.sim,
        },
        ode_residuals,
        route_agreement,
        relationship,
        frontier_equivalence,
        mc_moments,
        recursive_utility,
        perturbation,
        closed_form_audit,
        embedding,
        pass,
    })
}
