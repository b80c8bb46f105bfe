//! Operation tape and reverse traversal.

use std::collections::HashSet;

use crate::error::{Error, Result};

use super::{Elem, Tensor};

/// Per-input gradient contributions produced by a backward closure.
/// `None` marks an input whose gradient is not needed.
pub(crate) type Contributions<F> = Vec<Option<Vec<F>>>;

type BackwardFn<F> = Box<dyn Fn(&[Tensor<F>], &Tensor<F>, &[F]) -> Contributions<F>>;

struct Record<F: Elem> {
    inputs: Vec<Tensor<F>>,
    output: Tensor<F>,
    backward: BackwardFn<F>,
}

/// Records executed operations so gradients can flow back through them.
///
/// One graph serves one forward pass: after [`Graph::backward`] the tape is
/// consumed and further use is an error. Build a fresh graph per step.
pub struct Graph<F: Elem> {
    records: Vec<Record<F>>,
    recording: bool,
    consumed: bool,
}

impl<F: Elem> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Elem> Graph<F> {
    /// A recording graph: operations involving grad-requiring tensors are taped.
    pub fn new() -> Self {
        Graph {
            records: Vec::new(),
            recording: true,
            consumed: false,
        }
    }

    /// A non-recording graph for inference and finite-difference probes:
    /// nothing is taped and outputs never require gradients.
    pub fn no_grad() -> Self {
        Graph {
            records: Vec::new(),
            recording: false,
            consumed: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of taped operations (diagnostics and tests).
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Create the output tensor for an op and tape it when gradients are needed.
    pub(crate) fn push(
        &mut self,
        inputs: &[&Tensor<F>],
        out_shape: Vec<usize>,
        out_data: Vec<F>,
        backward: impl Fn(&[Tensor<F>], &Tensor<F>, &[F]) -> Contributions<F> + 'static,
    ) -> Tensor<F> {
        let out = Tensor::from_parts(out_shape, out_data);
        if self.recording && inputs.iter().any(|t| t.requires_grad()) {
            out.set_requires_grad(true);
            self.records.push(Record {
                inputs: inputs.iter().map(|t| (*t).clone()).collect(),
                output: out.clone(),
                backward: Box::new(backward),
            });
        }
        out
    }

    /// Propagate `d(loss)/d(tensor)` into every grad-requiring tensor that
    /// contributed to `loss`, accumulating into existing gradients.
    ///
    /// The tape is visited exactly once, in reverse execution order; by the
    /// time a record is processed every consumer of its output has already
    /// deposited its contribution, so each op sees a complete upstream grad.
    pub fn backward(&mut self, loss: &Tensor<F>) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if self.consumed {
            return Err(Error::invalid(
                "backward already ran on this graph; build a fresh graph per forward pass",
            ));
        }
        if !loss.requires_grad() {
            return Err(Error::invalid(
                "loss does not depend on any grad-requiring tensor recorded on this graph",
            ));
        }
        self.consumed = true;

        // Intermediates owned by the tape get transient gradient storage; only
        // leaves keep theirs after the tape is dropped. Track which tensors are
        // op outputs so their scratch grads can be cleared on the way out.
        let outputs: HashSet<usize> = self.records.iter().map(|r| r.output.key()).collect();

        loss.accumulate_grad(&[F::one()]);

        for rec in self.records.iter().rev() {
            let upstream = match rec.output.grad() {
                Some(g) => g,
                // No consumer needed this output; nothing flows back.
                None => continue,
            };
            let contributions = (rec.backward)(&rec.inputs, &rec.output, &upstream);
            debug_assert_eq!(contributions.len(), rec.inputs.len());
            for (input, contribution) in rec.inputs.iter().zip(contributions) {
                if let Some(delta) = contribution {
                    if input.requires_grad() {
                        input.accumulate_grad(&delta);
                    }
                }
            }
        }

        // Drop scratch gradients on intermediates so only leaves retain grads.
        for rec in &self.records {
            if outputs.contains(&rec.output.key()) {
                rec.output.zero_grad();
            }
        }

        Ok(())
    }
}
