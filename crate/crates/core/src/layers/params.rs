/// Ordered traversal over every trainable tensor of a module.
///
/// Parameters and their gradients implement this with the same ordering, so
/// optimizers and gradient checks can work on flat vectors.
pub trait ParamSet {
    fn visit(&self, f: &mut dyn FnMut((usize, usize), &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut((usize, usize), &mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        self.visit(&mut |s, _| out.push(s));
        out
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(&mut |_, t| out.extend_from_slice(t));
        out
    }

    /// Overwrites all parameters from `flat`. Panics on length mismatch.
    fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |_, t| {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        });
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    fn scale_all(&mut self, s: f64) {
        self.visit_mut(&mut |_, t| t.iter_mut().for_each(|v| *v *= s));
    }
}

impl<T: ParamSet> ParamSet for Vec<T> {
    fn visit(&self, f: &mut dyn FnMut((usize, usize), &[f64])) {
        for item in self {
            item.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut((usize, usize), &mut [f64])) {
        for item in self {
            item.visit_mut(f);
        }
    }
}
