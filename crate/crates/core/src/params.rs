//! Named parameter groups.
//!
//! Each group is generic over its leaf type: `Tensor<T>` for stored
//! weights, `Var<'t, T>` once bound to a tape, or anything else produced by
//! [`map`](ModelParams::map) (gradients, optimizer moments).

use rand::Rng;

use crate::tensor::{Scalar, Tape, Tensor, Var};

macro_rules! param_group {
    (@map leaf $x:expr, $f:ident) => { $f($x) };
    (@map group $x:expr, $f:ident) => { $x.map($f) };
    (@walk leaf $x:expr, $name:expr, $f:ident) => { $f($name, $x) };
    (@walk group $x:expr, $name:expr, $f:ident) => { $x.walk(&format!("{}.", $name), $f) };
    (@walk_mut leaf $x:expr, $name:expr, $f:ident) => { $f($name, $x) };
    (@walk_mut group $x:expr, $name:expr, $f:ident) => {
        $x.walk_mut(&format!("{}.", $name), $f)
    };

    ($(#[$meta:meta])* pub struct $name:ident { $($(#[$fmeta:meta])* $field:ident: $kind:ident($ty:ty)),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name<P> {
            $($(#[$fmeta])* pub $field: $ty,)*
        }

        impl<P> $name<P> {
            pub fn map<Q, F: FnMut(&P) -> Q>(&self, f: &mut F) -> $name<Q> {
                $name {
                    $($field: param_group!(@map $kind &self.$field, f),)*
                }
            }

            /// Visits every leaf with its dotted name, in declaration order.
            pub fn walk<'a, F: FnMut(String, &'a P)>(&'a self, prefix: &str, f: &mut F) {
                $(param_group!(@walk $kind &self.$field, format!("{}{}", prefix, stringify!($field)), f);)*
            }

            pub fn walk_mut<'a, F: FnMut(String, &'a mut P)>(&'a mut self, prefix: &str, f: &mut F) {
                $(param_group!(@walk_mut $kind &mut self.$field, format!("{}{}", prefix, stringify!($field)), f);)*
            }
        }

        impl<T: Scalar> $name<Tensor<T>> {
            /// Binds every tensor to `tape` as a gradient-receiving leaf.
            pub fn bind_on<'t>(&self, tape: &'t Tape<T>) -> $name<Var<'t, T>> {
                self.map(&mut |t: &Tensor<T>| tape.param(t.clone()))
            }
        }
    };
}

param_group! {
    /// One GRU direction: input weights `d_in×d_h`, recurrent weights
    /// `d_h×d_h` and biases `1×d_h` for the update (`z`), reset (`r`) and
    /// candidate (`n`) gates.
    pub struct GruDirection {
        w_z: leaf(P),
        w_r: leaf(P),
        w_n: leaf(P),
        u_z: leaf(P),
        u_r: leaf(P),
        u_n: leaf(P),
        b_z: leaf(P),
        b_r: leaf(P),
        b_n: leaf(P),
    }
}

param_group! {
    pub struct GruParams {
        forward: group(GruDirection<P>),
        backward: group(GruDirection<P>),
    }
}

param_group! {
    /// Query/key projections, both `2d_h×d_k`.
    pub struct AttentionParams {
        w_q: leaf(P),
        w_k: leaf(P),
    }
}

param_group! {
    pub struct EncoderParams {
        gru: group(GruParams<P>),
        attention: group(AttentionParams<P>),
    }
}

param_group! {
    /// Fully connected map into the clustering space.
    pub struct ProjectionParams {
        weight: leaf(P),
        bias: leaf(P),
    }
}

param_group! {
    /// `K×d_p` centers and the log-temperature `ρ` (`τ = exp ρ`).
    pub struct ClusterParams {
        centers: leaf(P),
        log_temperature: leaf(P),
    }
}

param_group! {
    pub struct ClassifierParams {
        w1: leaf(P),
        b1: leaf(P),
        w2: leaf(P),
        b2: leaf(P),
    }
}

param_group! {
    /// Every trainable tensor of the detector.
    pub struct ModelParams {
        news_embedding: leaf(P),
        comment_embedding: leaf(P),
        news_encoder: group(EncoderParams<P>),
        comment_encoder: group(EncoderParams<P>),
        projection: group(ProjectionParams<P>),
        clustering: group(ClusterParams<P>),
        classifier: group(ClassifierParams<P>),
    }
}

impl<T: Scalar> ModelParams<Tensor<T>> {
    /// Binds every tensor to `tape` as a gradient-receiving leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> ModelParams<Var<'t, T>> {
        self.bind_on(tape)
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.walk("", &mut |name, t| out.push((name, t)));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.walk_mut("", &mut |name, t| out.push((name, t)));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

impl<'t, T: Scalar> ModelParams<Var<'t, T>> {
    pub fn vars(&self) -> Vec<Var<'t, T>> {
        let mut out = Vec::new();
        self.walk("", &mut |_, v: &Var<'t, T>| out.push(*v));
        out
    }
}

/// Uniform in `±1/√fan_in`, where `fan_in` is the row count of a weight
/// (row-vector convention) and the matching weight's row count for a bias.
pub(crate) fn init_matrix<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::uniform(rows, cols, bound, rng)
}

impl<T: Scalar> GruDirection<Tensor<T>> {
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_h: usize, rng: &mut R) -> Self {
        GruDirection {
            w_z: init_matrix(d_in, d_h, d_in, rng),
            w_r: init_matrix(d_in, d_h, d_in, rng),
            w_n: init_matrix(d_in, d_h, d_in, rng),
            u_z: init_matrix(d_h, d_h, d_h, rng),
            u_r: init_matrix(d_h, d_h, d_h, rng),
            u_n: init_matrix(d_h, d_h, d_h, rng),
            b_z: init_matrix(1, d_h, d_h, rng),
            b_r: init_matrix(1, d_h, d_h, rng),
            b_n: init_matrix(1, d_h, d_h, rng),
        }
    }
}

impl<T: Scalar> EncoderParams<Tensor<T>> {
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_h: usize, d_k: usize, rng: &mut R) -> Self {
        let gru = GruParams {
            forward: GruDirection::init(d_in, d_h, rng),
            backward: GruDirection::init(d_in, d_h, rng),
        };
        let attention = AttentionParams {
            w_q: init_matrix(2 * d_h, d_k, 2 * d_h, rng),
            w_k: init_matrix(2 * d_h, d_k, 2 * d_h, rng),
        };
        EncoderParams { gru, attention }
    }

    /// All-zero parameters of the given widths.
    pub fn zeros(d_in: usize, d_h: usize, d_k: usize) -> Self {
        let dir = || GruDirection {
            w_z: Tensor::zeros(d_in, d_h),
            w_r: Tensor::zeros(d_in, d_h),
            w_n: Tensor::zeros(d_in, d_h),
            u_z: Tensor::zeros(d_h, d_h),
            u_r: Tensor::zeros(d_h, d_h),
            u_n: Tensor::zeros(d_h, d_h),
            b_z: Tensor::zeros(1, d_h),
            b_r: Tensor::zeros(1, d_h),
            b_n: Tensor::zeros(1, d_h),
        };
        EncoderParams {
            gru: GruParams {
                forward: dir(),
                backward: dir(),
            },
            attention: AttentionParams {
                w_q: Tensor::zeros(2 * d_h, d_k),
                w_k: Tensor::zeros(2 * d_h, d_k),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn walk_names_are_dotted_and_ordered() {
        let p = EncoderParams::<Tensor<f64>>::zeros(2, 3, 6);
        let mut names = Vec::new();
        p.walk("enc.", &mut |n, _| names.push(n));
        assert_eq!(names.len(), 2 * 9 + 2);
        assert_eq!(names[0], "enc.gru.forward.w_z");
        assert_eq!(names[9], "enc.gru.backward.w_z");
        assert_eq!(names.last().unwrap(), "enc.attention.w_k");
    }

    #[test]
    fn map_preserves_structure() {
        let p = EncoderParams::<Tensor<f64>>::zeros(2, 3, 6);
        let shapes = p.map(&mut |t: &Tensor<f64>| t.shape());
        assert_eq!(shapes.gru.forward.u_n, [3, 3]);
        assert_eq!(shapes.attention.w_q, [6, 6]);
    }
}
