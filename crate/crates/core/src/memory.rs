//! Static memory accounting and paging decisions.
//!
//! A step's working set is its input buffer, its output buffer and the
//! kernel's scratch. Sizes: i8 elements 1 byte, accumulators and i32 terms
//! 4 bytes, folded reals 8 bytes.

use serde::{Deserialize, Serialize};
use tinyaot_runtime::kernels::page_count;

use crate::compile::{CompiledPlan, Kernel, Paging, Step};
use crate::error::{Error, Result};

const ACC: usize = 4;
const I32: usize = 4;
const REAL: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepMemory {
    pub op: usize,
    pub working_set_bytes: usize,
    pub paged: bool,
    pub page_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub flash_bytes: usize,
    pub peak_ram_bytes: usize,
    pub steps: Vec<StepMemory>,
}

impl MemoryReport {
    /// Number of pages the step at `op` runs in, if it is paged.
    pub fn pages(&self, plan: &CompiledPlan, op: usize) -> Option<usize> {
        let s = self.steps.get(op)?;
        match (&plan.steps[op].kernel, s.page_size) {
            (Kernel::FullyConnected(fc), Some(size)) => Some(page_count(fc.units, size)),
            _ => None,
        }
    }
}

/// Bytes of an unpaged FullyConnected step: input, output, the weight
/// matrix, i32 biases and one i32 accumulator per weight.
fn fc_unpaged(rows: usize, n: usize, p: usize) -> usize {
    rows * n + rows * p + n * p + I32 * p + ACC * n * p
}

/// Bytes of a paged FullyConnected step: input, output, and one resident
/// page holding per output neuron one weight column, a bias, an accumulator
/// and an output element.
fn fc_paged(rows: usize, n: usize, p: usize, page_size: usize) -> usize {
    rows * n + rows * p + page_size * (n + I32 + ACC + 1)
}

/// Working set of one step under its current paging directive.
pub fn working_set(step: &Step) -> usize {
    let (input, output) = (step.input.len(), step.output.len());
    match &step.kernel {
        Kernel::FullyConnected(fc) => match step.paging {
            Some(Paging { page_size }) => fc_paged(fc.rows, fc.inner, fc.units, page_size),
            None => fc_unpaged(fc.rows, fc.inner, fc.units),
        },
        Kernel::Conv2d(c) | Kernel::DepthwiseConv2d(c) => {
            input + output + c.filters.len() + I32 * c.geometry.out_c + step.view_len() + ACC
        }
        Kernel::AveragePool2d(_) => input + output + step.view_len() + ACC,
        Kernel::Reshape => input + output,
        Kernel::Softmax(_) => input + output + REAL,
    }
}

/// Bytes of read-only data a step embeds: constant payloads plus folded terms.
pub fn step_flash(step: &Step) -> usize {
    match &step.kernel {
        Kernel::FullyConnected(fc) => {
            fc.weights.len()
                + REAL * fc.bias_term.len()
                + I32 * fc.weight_col_sums.len()
                + REAL
                + 3 * I32
        }
        Kernel::Conv2d(c) | Kernel::DepthwiseConv2d(c) => {
            c.filters.len() + REAL * c.bias_term.len() + I32 * c.filter_sums.len() + REAL + 3 * I32
        }
        Kernel::AveragePool2d(_) => 2 * REAL + 2 * I32,
        Kernel::Reshape => 0,
        Kernel::Softmax(_) => 2 * REAL + I32,
    }
}

pub fn flash_bytes(plan: &CompiledPlan) -> usize {
    plan.steps.iter().map(step_flash).sum()
}

/// Report for a plan exactly as its paging directives stand.
pub fn report(plan: &CompiledPlan) -> MemoryReport {
    let steps: Vec<StepMemory> = plan
        .steps
        .iter()
        .enumerate()
        .map(|(op, s)| StepMemory {
            op,
            working_set_bytes: working_set(s),
            paged: s.paging.is_some(),
            page_size: s.paging.map(|p| p.page_size),
        })
        .collect();
    MemoryReport {
        flash_bytes: flash_bytes(plan),
        peak_ram_bytes: steps.iter().map(|s| s.working_set_bytes).max().unwrap_or(0),
        steps,
    }
}

/// Picks paging directives against `ram_budget` and reports the result.
///
/// Without a budget the plan is returned unchanged. With one, every
/// FullyConnected step over budget is paged with the smallest page count
/// that fits; any other step over budget, or an FC step that does not fit
/// even one neuron per page, is infeasible.
pub fn plan_memory(
    plan: &CompiledPlan,
    ram_budget: Option<usize>,
) -> Result<(CompiledPlan, MemoryReport)> {
    let mut plan = plan.clone();
    if let Some(budget) = ram_budget {
        for (k, step) in plan.steps.iter_mut().enumerate() {
            let needed = working_set(step);
            if needed <= budget {
                continue;
            }
            let Kernel::FullyConnected(fc) = &step.kernel else {
                return Err(Error::Infeasible {
                    step: k,
                    working_set: needed,
                    budget,
                });
            };
            let (rows, n, p) = (fc.rows, fc.inner, fc.units);
            let fit = (1..=p)
                .map(|count| p.div_ceil(count))
                .find(|&size| fc_paged(rows, n, p, size) <= budget);
            match fit {
                Some(page_size) => step.paging = Some(Paging { page_size }),
                None => {
                    return Err(Error::Infeasible {
                        step: k,
                        working_set: fc_paged(rows, n, p, 1),
                        budget,
                    })
                }
            }
        }
    }
    let report = report(&plan);
    Ok((plan, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compile::fold_constants;
    use crate::graph::build_graph;
    use crate::synth;
    use proptest::prelude::*;

    fn plan_of(m: &crate::model::ModelFile) -> CompiledPlan {
        fold_constants(&build_graph(m).unwrap()).unwrap()
    }

    #[test]
    fn dense32_unpaged_itemization() {
        let plan = plan_of(&synth::dense32(0));
        let (_, r) = plan_memory(&plan, None).unwrap();
        // 32 in + 32 out + 1024 weights + 128 bias + 4096 accumulators
        assert_eq!(r.steps[0].working_set_bytes, 32 + 32 + 1024 + 128 + 4096);
        assert!(!r.steps[0].paged);
        assert_eq!(r.peak_ram_bytes, 5312);
    }

    #[test]
    fn dense32_under_2k_budget_is_paged() {
        let plan = plan_of(&synth::dense32(0));
        let (paged, r) = plan_memory(&plan, Some(2048)).unwrap();
        assert!(r.steps[0].paged);
        assert!(r.peak_ram_bytes < 2048);
        let pages = r.pages(&paged, 0).unwrap();
        assert!((1..=32).contains(&pages));
    }

    #[test]
    fn smallest_page_count_is_chosen() {
        let plan = plan_of(&synth::dense32(0));
        // One neuron per page: 32 + 32 + 41.
        let (paged, r) = plan_memory(&plan, Some(105)).unwrap();
        assert_eq!(r.steps[0].page_size, Some(1));
        assert_eq!(r.pages(&paged, 0), Some(32));
        // Two neurons per page would need 146 bytes.
        let (_, r) = plan_memory(&plan, Some(146)).unwrap();
        assert_eq!(r.steps[0].page_size, Some(2));
    }

    #[test]
    fn unreachable_budget_is_infeasible() {
        let plan = plan_of(&synth::dense32(0));
        match plan_memory(&plan, Some(104)) {
            Err(Error::Infeasible {
                step: 0,
                working_set: 105,
                budget: 104,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let conv = plan_of(&synth::mobilenet_mini(0));
        assert!(matches!(
            plan_memory(&conv, Some(64)),
            Err(Error::Infeasible { step: 0, .. })
        ));
    }

    #[test]
    fn no_budget_adds_no_directives() {
        let plan = plan_of(&synth::tiny_conv(0));
        let (same, r) = plan_memory(&plan, None).unwrap();
        assert_eq!(same, plan);
        assert!(r.steps.iter().all(|s| !s.paged && s.page_size.is_none()));
    }

    #[test]
    fn report_is_reproducible_from_plan() {
        let plan = plan_of(&synth::tiny_conv(1));
        let (paged, r) = plan_memory(&plan, Some(10_000)).unwrap();
        assert!(r.steps[2].paged);
        assert_eq!(report(&paged), r);
        assert_eq!(
            r.peak_ram_bytes,
            r.steps.iter().map(|s| s.working_set_bytes).max().unwrap()
        );
    }

    #[test]
    fn flash_counts_payloads_and_folded_terms() {
        let plan = plan_of(&synth::dense32(0));
        assert_eq!(flash_bytes(&plan), 1024 + 8 * 32 + 4 * 32 + 8 + 12);
    }

    #[test]
    fn report_json_keys() {
        let plan = plan_of(&synth::dense32(0));
        let (_, r) = plan_memory(&plan, Some(2048)).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["flash_bytes", "peak_ram_bytes", "steps"]);
        let step: Vec<_> = v["steps"][0].as_object().unwrap().keys().cloned().collect();
        assert_eq!(step, ["op", "page_size", "paged", "working_set_bytes"]);
    }

    proptest! {
        #[test]
        fn more_pages_never_grow_the_working_set(n in 1usize..80, p in 1usize..80, rows in 1usize..4) {
            let mut last = usize::MAX;
            for count in 1..=p {
                let ws = fc_paged(rows, n, p, p.div_ceil(count));
                prop_assert!(ws <= last);
                last = ws;
            }
        }
    }
}
