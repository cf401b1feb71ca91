//! Central finite differences against every hand-written gradient, on
//! networks of width at most 8. Each check returns the worst relative error
//! per gradient it compares.

use velab::flow::{flow_loss_matrices, FlowNetwork};
use velab::nn::MlpNetwork;
use velab::rng::RngStream;
use velab::tokenizer::{
    kl_loss, magnitude_reg_loss, recon_loss, total_loss_with_noise, ve_var_loss, LossConfig,
    LossMode, ReconNorm, RegTarget, TokenizerModel,
};
use velab::train::ArchSpec;
use velab::Matrix;

pub const H: f64 = 1e-6;
pub const TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradError {
    pub what: String,
    pub rel_err: f64,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradError {
    /// False for NaN errors as well as large ones.
    pub fn within_tol(&self) -> bool {
        self.rel_err < TOL
    }
}

impl std::fmt::Display for GradError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: relative error {:.3e} (analytic {}, numeric {})",
            self.what, self.rel_err, self.analytic, self.numeric
        )
    }
}

/// Largest component-wise relative error; tiny components are compared on an absolute floor.
fn compare(what: String, analytic: &[f64], numeric: &[f64]) -> GradError {
    assert_eq!(analytic.len(), numeric.len(), "{what}: gradient length");
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-6 * scale.max(1e-6);
    let (rel_err, at) = analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .map(|(i, (a, n))| ((a - n).abs() / a.abs().max(n.abs()).max(floor), i))
        .fold(
            (0.0, 0),
            |best, cur| if cur.0 > best.0 { cur } else { best },
        );
    GradError {
        what,
        rel_err,
        analytic: analytic.get(at).copied().unwrap_or(0.0),
        numeric: numeric.get(at).copied().unwrap_or(0.0),
    }
}

fn fd<F: FnMut(&[f64]) -> f64>(x: &[f64], mut f: F) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + H;
            let up = f(&p);
            p[i] = orig - H;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut RngStream) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        *v = scale * rng.normal();
    }
    m
}

/// Zero initial biases put ReLU kinks exactly where dead units feed the next
/// layer; random biases keep every check away from them.
fn jitter_biases(net: &mut MlpNetwork, rng: &mut RngStream) {
    for l in net.layers_mut() {
        for b in l.bias.iter_mut() {
            *b = 0.3 * rng.normal();
        }
    }
}

fn small_model(width: usize, seed: u64) -> TokenizerModel {
    let mut rng = RngStream::new(seed, "grad-init");
    let mut m = TokenizerModel::new(
        ArchSpec {
            depth: 3,
            hidden: width,
        },
        &mut rng,
    )
    .unwrap();
    jitter_biases(&mut m.encoder, &mut rng);
    jitter_biases(&mut m.decoder, &mut rng);
    m
}

pub fn mlp_parameter_and_input() -> Vec<GradError> {
    let mut rng = RngStream::new(1, "grad");
    let mut out = Vec::new();
    for (depth, width) in [(1, 8), (2, 4), (3, 8), (4, 6)] {
        let spec = ArchSpec {
            depth,
            hidden: width,
        }
        .mlp(3, 2);
        let mut net = MlpNetwork::new(spec, &mut rng).unwrap();
        jitter_biases(&mut net, &mut rng);
        let x = random_matrix(5, 3, 1.0, &mut rng);
        let w = random_matrix(5, 2, 1.0, &mut rng);
        // scalar objective: Σ w ⊙ net(x)
        let objective = |net: &MlpNetwork, x: &Matrix| -> f64 {
            net.forward(x, None)
                .unwrap()
                .as_slice()
                .iter()
                .zip(w.as_slice())
                .map(|(a, b)| a * b)
                .sum()
        };
        let (_, tape) = net.forward_with_tape(&x).unwrap();
        let (grads, gin) = net.backward(&tape, &w).unwrap();

        let mut probe = net.clone();
        let numeric = fd(&net.params_flat(), |p| {
            probe.set_params_flat(p).unwrap();
            objective(&probe, &x)
        });
        out.push(compare(
            format!("mlp params depth {depth}"),
            &grads.to_flat(),
            &numeric,
        ));

        let numeric_in = fd(x.as_slice(), |p| {
            objective(&net, &Matrix::from_vec(5, 3, p.to_vec()).unwrap())
        });
        out.push(compare(
            format!("mlp input depth {depth}"),
            gin.as_slice(),
            &numeric_in,
        ));
    }
    out
}

pub fn individual_loss_terms() -> Vec<GradError> {
    let mut rng = RngStream::new(2, "terms");
    let mut out = Vec::new();
    let x = random_matrix(6, 2, 1.0, &mut rng);
    let xh = random_matrix(6, 2, 1.0, &mut rng);
    for norm in [ReconNorm::SquaredL2, ReconNorm::L2] {
        let g = recon_loss(&x, &xh, norm).unwrap();
        let numeric = fd(xh.as_slice(), |p| {
            recon_loss(&x, &Matrix::from_vec(6, 2, p.to_vec()).unwrap(), norm)
                .unwrap()
                .value
        });
        out.push(compare(
            format!("recon {norm:?}"),
            g.grad.as_slice(),
            &numeric,
        ));
    }

    let mu = random_matrix(6, 2, 1.0, &mut rng);
    let lv = random_matrix(6, 2, 1.5, &mut rng);
    let k = kl_loss(&mu, &lv);
    let n_mu = fd(mu.as_slice(), |p| {
        kl_loss(&Matrix::from_vec(6, 2, p.to_vec()).unwrap(), &lv).value
    });
    let n_lv = fd(lv.as_slice(), |p| {
        kl_loss(&mu, &Matrix::from_vec(6, 2, p.to_vec()).unwrap()).value
    });
    out.push(compare("kl mu".into(), k.grad_mu.as_slice(), &n_mu));
    out.push(compare(
        "kl log-var".into(),
        k.grad_log_var.as_slice(),
        &n_lv,
    ));

    for delta in [1e-8, 0.3] {
        let v = ve_var_loss(&lv, delta);
        let numeric = fd(lv.as_slice(), |p| {
            ve_var_loss(&Matrix::from_vec(6, 2, p.to_vec()).unwrap(), delta).value
        });
        out.push(compare(
            format!("ve variance term delta {delta}"),
            v.grad.as_slice(),
            &numeric,
        ));
    }

    let z = random_matrix(6, 2, 2.0, &mut rng);
    for tau in [0.0, 1.0] {
        let r = magnitude_reg_loss(&z, tau);
        let numeric = fd(z.as_slice(), |p| {
            magnitude_reg_loss(&Matrix::from_vec(6, 2, p.to_vec()).unwrap(), tau).value
        });
        out.push(compare(
            format!("magnitude term tau {tau}"),
            r.grad.as_slice(),
            &numeric,
        ));
    }
    out
}

/// Every loss mode, through encoder, reparameterization and decoder. Weights
/// are large enough that each term shows up above finite-difference noise.
pub fn total_loss_through_reparameterization() -> Vec<GradError> {
    let modes = [
        LossMode::Kl { beta: 0.5 },
        LossMode::Ve {
            lambda1: 0.3,
            lambda2: 0.2,
            tau: 0.5,
            delta: 1e-8,
        },
        LossMode::ve(1e-2),
        LossMode::FixedVar { sigma: 0.3 },
        LossMode::CandidateNegVar { alpha: 0.4 },
        LossMode::CandidateLogEntropy { beta_log: 0.4 },
    ];
    let mut rng = RngStream::new(3, "total");
    let x = random_matrix(7, 2, 1.0, &mut rng);
    let eps = random_matrix(7, 2, 1.0, &mut rng);
    let mut out = Vec::new();
    for (i, mode) in modes.into_iter().enumerate() {
        for (norm, target) in [
            (ReconNorm::SquaredL2, RegTarget::Sample),
            (ReconNorm::L2, RegTarget::Mean),
        ] {
            let cfg = LossConfig {
                mode,
                recon_norm: norm,
                reg_target: target,
            };
            let model = small_model(if i % 2 == 0 { 8 } else { 5 }, 10 + i as u64);
            let loss = total_loss_with_noise(&model, &x, &cfg, &eps).unwrap();
            let label = format!("{} {norm:?} {target:?}", mode.label());

            let mut probe = model.clone();
            let enc_numeric = fd(&model.encoder.params_flat(), |p| {
                probe.encoder.set_params_flat(p).unwrap();
                total_loss_with_noise(&probe, &x, &cfg, &eps).unwrap().total
            });
            out.push(compare(
                format!("{label} encoder"),
                &loss.encoder_grads.to_flat(),
                &enc_numeric,
            ));

            let mut probe = model.clone();
            let dec_numeric = fd(&model.decoder.params_flat(), |p| {
                probe.decoder.set_params_flat(p).unwrap();
                total_loss_with_noise(&probe, &x, &cfg, &eps).unwrap().total
            });
            out.push(compare(
                format!("{label} decoder"),
                &loss.decoder_grads.to_flat(),
                &dec_numeric,
            ));
        }
    }
    out
}

/// A log-variance head far below the clamp floor gets exactly zero gradient.
pub fn clamped_log_variance() -> Vec<GradError> {
    let mut model = small_model(4, 5);
    let last = model.encoder.layers_mut().last_mut().unwrap();
    for (o, b) in last.bias.iter_mut().enumerate() {
        if o >= 2 {
            *b = -1e3;
        }
    }
    let mut rng = RngStream::new(4, "clamp");
    let x = random_matrix(4, 2, 1.0, &mut rng);
    let eps = random_matrix(4, 2, 1.0, &mut rng);
    let cfg = LossConfig::new(LossMode::ve(1e-2));
    let loss = total_loss_with_noise(&model, &x, &cfg, &eps).unwrap();
    let head = &loss.encoder_grads.layers.last().unwrap().bias[2..];
    let leak = head.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut probe = model.clone();
    let numeric = fd(&model.encoder.params_flat(), |p| {
        probe.encoder.set_params_flat(p).unwrap();
        total_loss_with_noise(&probe, &x, &cfg, &eps).unwrap().total
    });
    vec![
        GradError {
            what: "clamped head gradient".into(),
            // any nonzero leak is a failure
            rel_err: if leak == 0.0 { 0.0 } else { f64::INFINITY },
            analytic: leak,
            numeric: 0.0,
        },
        compare(
            "clamped encoder".into(),
            &loss.encoder_grads.to_flat(),
            &numeric,
        ),
    ]
}

pub fn flow_matching_loss() -> Vec<GradError> {
    let mut rng = RngStream::new(6, "flow");
    let mut out = Vec::new();
    for width in [4, 8] {
        let mut flow = FlowNetwork::new(
            ArchSpec {
                depth: 3,
                hidden: width,
            },
            2,
            &mut rng,
        )
        .unwrap();
        jitter_biases(&mut flow.net, &mut rng);
        let mut input = random_matrix(9, 3, 1.0, &mut rng);
        for r in 0..9 {
            input.set(r, 2, (r as f64 + 0.5) / 9.0);
        }
        let target = random_matrix(9, 2, 1.0, &mut rng);
        let (_, grads) = flow_loss_matrices(&flow, &input, &target).unwrap();
        let mut probe = flow.clone();
        let numeric = fd(&flow.net.params_flat(), |p| {
            probe.net.set_params_flat(p).unwrap();
            flow_loss_matrices(&probe, &input, &target).unwrap().0
        });
        out.push(compare(
            format!("flow width {width}"),
            &grads.to_flat(),
            &numeric,
        ));
    }
    out
}

/// Every check above, in order.
pub fn all() -> Vec<GradError> {
    [
        mlp_parameter_and_input(),
        individual_loss_terms(),
        total_loss_through_reparameterization(),
        clamped_log_variance(),
        flow_matching_loss(),
    ]
    .concat()
}

/// Panics with every comparison that misses the tolerance.
pub fn assert_all_within(errors: &[GradError]) {
    let bad: Vec<String> = errors
        .iter()
        .filter(|e| !e.within_tol())
        .map(|e| e.to_string())
        .collect();
    assert!(bad.is_empty(), "gradient mismatches:\n{}", bad.join("\n"));
}
