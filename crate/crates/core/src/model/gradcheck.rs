use super::{Model, ModelError, Parameters};
use crate::corpus::SourceSeq;
use crate::dsl::{AnswerOptions, Program};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Worst relative error per tensor, in [`Parameters::named`] order.
    pub per_tensor: Vec<(String, f64)>,
    pub n_checked: usize,
}

/// Below this magnitude a central difference cannot resolve a gradient
/// entry: with a loss around 1e2 and a step of 1e-4, rounding alone moves
/// the difference quotient by a few 1e-10.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(REL_ERROR_FLOOR)
}

/// Central differences against the analytic gradient of the marginal loss,
/// over every entry of every tensor. Back-propagation runs unstaged.
pub fn gradient_check(
    model: &Model,
    x: &SourceSeq,
    options: &AnswerOptions,
    programs: &[Program],
    epsilon: f64,
) -> Result<GradCheckReport, ModelError> {
    let mut grads = model.params.zeros_like();
    model.marginal_loss_staged(x, options, programs, Some(&mut grads), usize::MAX)?;
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data.clone()).collect();
    let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();

    let mut probe = model.clone();
    let mut per_tensor = Vec::with_capacity(names.len());
    let mut n_checked = 0;
    let mut max_abs_error: f64 = 0.0;
    let loss = |m: &Model| -> Result<f64, ModelError> { Ok(m.marginal_loss_staged(x, options, programs, None, usize::MAX)?.loss) };
    for (ti, name) in names.iter().enumerate() {
        let mut worst: f64 = 0.0;
        let len = analytic[ti].len();
        for k in 0..len {
            let orig = tensor_at(&mut probe.params, ti)[k];
            tensor_at(&mut probe.params, ti)[k] = orig + epsilon;
            let up = loss(&probe)?;
            tensor_at(&mut probe.params, ti)[k] = orig - epsilon;
            let down = loss(&probe)?;
            tensor_at(&mut probe.params, ti)[k] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            max_abs_error = max_abs_error.max((analytic[ti][k] - numeric).abs());
            worst = worst.max(rel_error(analytic[ti][k], numeric));
            n_checked += 1;
        }
        per_tensor.push((name.clone(), worst));
    }
    let max_rel_error = per_tensor.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, max_abs_error, per_tensor, n_checked })
}

fn tensor_at(p: &mut Parameters, i: usize) -> &mut Vec<f64> {
    &mut p.tensors_mut().swap_remove(i).data
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::Problem;
    use crate::induction::{induce_programs, InductionConfig, UniformScorer};
    use crate::model::{ModelConfig, Vocab};
    use crate::synth;

    /// A short two-step rationale, so that the loss stays small and central
    /// differences stay well above rounding noise.
    pub(crate) fn toy_problem() -> Problem {
        Problem::new(
            "Ann has 3 bags of 4 pens and 2 more pens .",
            ["A) 12", "B) 14", "C) 9", "D) 7", "E) 10"].map(String::from),
            "3 * 4 = 12\n12 + 2 = 14",
            crate::corpus::Letter::B,
        )
        .unwrap()
    }

    pub(crate) fn toy_example(seed: u64) -> (Model, Problem, Vec<Program>) {
        toy_example_scaled(seed, ModelConfig::toy().init_scale)
    }

    pub(crate) fn toy_example_scaled(seed: u64, init_scale: f64) -> (Model, Problem, Vec<Program>) {
        let p = toy_problem();
        let mut vocab_src = synth::generate(3, seed);
        vocab_src.push(p.clone());
        let vocab = Vocab::build(&vocab_src, 30);
        let model = Model::new(ModelConfig { init_scale, ..ModelConfig::toy() }, vocab, seed);
        let cfg = InductionConfig { max_programs: 2, beam: 20, ..InductionConfig::default() };
        let set = induce_programs(&p.source(), &p.target(), &AnswerOptions::new(&p.options), &cfg, &UniformScorer);
        let programs = set.programs.into_iter().map(|p| p.program).collect();
        (model, p, programs)
    }

    #[test]
    fn analytic_matches_numeric() {
        // a wider init than the default keeps most entries above the floor
        let (model, p, programs) = toy_example_scaled(2, 0.5);
        assert!(programs.len() >= 2);
        let r = gradient_check(&model, &p.source(), &AnswerOptions::new(&p.options), &programs, 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-4, "{:?}", r.per_tensor);
        assert!(r.max_abs_error < 1e-7, "{}", r.max_abs_error);
        assert_eq!(r.n_checked, model.params.n_values());
    }

    #[test]
    fn zero_pointer_output_forces_zero_projection_gradient() {
        let (mut model, p, programs) = toy_example(3);
        model.params.copy_out.v.data.iter_mut().for_each(|v| *v = 0.0);
        let mut g = model.params.zeros_like();
        model.marginal_loss(&p.source(), &AnswerOptions::new(&p.options), &programs, Some(&mut g)).unwrap();
        assert!(g.copy_out.wk.data.iter().all(|&v| v == 0.0));
        assert!(g.copy_out.wq.w.data.iter().all(|&v| v == 0.0));
        assert!(g.copy_out.v.data.iter().any(|&v| v != 0.0));
    }
}
