//! Feature-space contracts of the voxel-to-point fusion: position-vector
//! enhancement, gated concatenation of semantic and geometric features, and
//! a fixed-weight affine stack standing in for the learned MLPs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureRole {
    PointWise,
    VoxelWise,
    PointGeometric,
    VoxelSemantic,
    PointSemantic,
    SemanticGate,
    GeometricGate,
    Fused,
    Position,
}

impl FeatureRole {
    /// Channel count used by the reference configuration.
    pub fn default_len(self) -> usize {
        match self {
            Self::PointWise => 64,
            Self::VoxelWise | Self::VoxelSemantic | Self::Position | Self::Fused => 256,
            Self::PointGeometric | Self::PointSemantic | Self::SemanticGate | Self::GeometricGate => {
                128
            }
        }
    }

    fn is_gate(self) -> bool {
        matches!(self, Self::SemanticGate | Self::GeometricGate)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector<T> {
    pub role: FeatureRole,
    pub values: Vec<T>,
}

impl<T: Scalar> FeatureVector<T> {
    /// Builds a feature; gate roles must hold values in `[0, 1]`.
    pub fn new(role: FeatureRole, values: Vec<T>) -> Result<Self> {
        if role.is_gate() {
            check_gate(&values)?;
        }
        Ok(Self { role, values })
    }

    pub fn zeros(role: FeatureRole, len: usize) -> Self {
        Self {
            role,
            values: vec![T::zero(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::LengthMismatch { expected, got });
    }
    Ok(())
}

fn check_gate<T: Scalar>(gate: &[T]) -> Result<()> {
    if let Some(v) = gate.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
        return Err(Error::Domain(format!("gate value {v} outside [0,1]")));
    }
    Ok(())
}

/// Enhances voxel semantic features with the encoded position by addition.
pub fn combine_position<T: Scalar>(
    f_vsem: &FeatureVector<T>,
    pos: &FeatureVector<T>,
) -> Result<FeatureVector<T>> {
    check_len(f_vsem.len(), pos.len())?;
    Ok(FeatureVector {
        role: FeatureRole::VoxelSemantic,
        values: f_vsem
            .values
            .iter()
            .zip(&pos.values)
            .map(|(a, b)| *a + *b)
            .collect(),
    })
}

/// `[f_psem * s_sem, f_pgeo * s_geo]`: Hadamard-gated halves, semantic first.
pub fn fuse<T: Scalar>(
    f_psem: &FeatureVector<T>,
    s_sem: &FeatureVector<T>,
    f_pgeo: &FeatureVector<T>,
    s_geo: &FeatureVector<T>,
) -> Result<FeatureVector<T>> {
    check_len(f_psem.len(), s_sem.len())?;
    check_len(f_pgeo.len(), s_geo.len())?;
    check_gate(&s_sem.values)?;
    check_gate(&s_geo.values)?;
    let mut values = Vec::with_capacity(f_psem.len() + f_pgeo.len());
    values.extend(f_psem.values.iter().zip(&s_sem.values).map(|(f, s)| *f * *s));
    values.extend(f_pgeo.values.iter().zip(&s_geo.values).map(|(f, s)| *f * *s));
    Ok(FeatureVector {
        role: FeatureRole::Fused,
        values,
    })
}

/// Splits a fused vector back into its semantic and geometric halves.
pub fn split_fused<T: Scalar>(
    fused: &FeatureVector<T>,
    semantic_len: usize,
) -> Result<(FeatureVector<T>, FeatureVector<T>)> {
    if semantic_len > fused.len() {
        return Err(Error::LengthMismatch {
            expected: semantic_len,
            got: fused.len(),
        });
    }
    let (a, b) = fused.values.split_at(semantic_len);
    Ok((
        FeatureVector {
            role: FeatureRole::PointSemantic,
            values: a.to_vec(),
        },
        FeatureVector {
            role: FeatureRole::PointGeometric,
            values: b.to_vec(),
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

impl Activation {
    fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Self::Relu => v.max(T::zero()),
            Self::Sigmoid => T::one() / (T::one() + (-v).exp()),
            Self::None => v,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Sigmoid => "sigmoid",
            Self::None => "none",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "sigmoid" => Ok(Self::Sigmoid),
            "none" => Ok(Self::None),
            other => Err(Error::Format(format!("unknown activation '{other}'"))),
        }
    }
}

/// One affine layer, `y = act(W x + b)`, with `W` stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineLayer<T> {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> AffineLayer<T> {
    pub fn new(rows: usize, cols: usize, weights: Vec<T>, bias: Vec<T>, activation: Activation) -> Result<Self> {
        check_len(rows * cols, weights.len())?;
        check_len(rows, bias.len())?;
        Ok(Self {
            rows,
            cols,
            weights,
            bias,
            activation,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut weights = vec![T::zero(); n * n];
        for i in 0..n {
            weights[i * n + i] = T::one();
        }
        Self {
            rows: n,
            cols: n,
            weights,
            bias: vec![T::zero(); n],
            activation: Activation::None,
        }
    }

    fn forward(&self, x: &[T]) -> Vec<T> {
        self.weights
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| {
                let acc = row.iter().zip(x).fold(*b, |acc, (w, v)| acc + *w * *v);
                self.activation.apply(acc)
            })
            .collect()
    }
}

/// Fixed-weight MLP; batch-norm is assumed folded into the affine weights.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AffineStack<T> {
    pub layers: Vec<AffineLayer<T>>,
}

impl<T: Scalar> AffineStack<T> {
    pub fn new(layers: Vec<AffineLayer<T>>) -> Result<Self> {
        for pair in layers.windows(2) {
            check_len(pair[0].rows, pair[1].cols)?;
        }
        Ok(Self { layers })
    }

    pub fn input_len(&self) -> Option<usize> {
        self.layers.first().map(|l| l.cols)
    }

    /// Parses the text weight format:
    ///
    /// ```text
    /// affine_stack <num_layers>
    /// layer <rows> <cols> <relu|sigmoid|none>
    /// <rows lines of cols weights>
    /// <one line of rows biases>
    /// ...
    /// ```
    ///
    /// Tokens are whitespace separated; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        let mut next = |what: &str| {
            tokens
                .next()
                .ok_or_else(|| Error::Format(format!("unexpected end of input, wanted {what}")))
        };
        let num = |s: &str| -> Result<T> {
            s.parse::<f64>()
                .map(T::lit)
                .map_err(|_| Error::Format(format!("bad number '{s}'")))
        };
        let count = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad count '{s}'")))
        };
        if next("header")? != "affine_stack" {
            return Err(Error::Format("missing 'affine_stack' header".into()));
        }
        let n = count(next("layer count")?)?;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            if next("layer")? != "layer" {
                return Err(Error::Format("expected 'layer'".into()));
            }
            let rows = count(next("rows")?)?;
            let cols = count(next("cols")?)?;
            let act = Activation::parse(next("activation")?)?;
            let weights = (0..rows * cols)
                .map(|_| num(next("weight")?))
                .collect::<Result<Vec<T>>>()?;
            let bias = (0..rows)
                .map(|_| num(next("bias")?))
                .collect::<Result<Vec<T>>>()?;
            layers.push(AffineLayer::new(rows, cols, weights, bias, act)?);
        }
        if let Some(extra) = tokens.next() {
            return Err(Error::Format(format!("trailing token '{extra}'")));
        }
        Self::new(layers)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("affine_stack {}\n", self.layers.len());
        for l in &self.layers {
            let _ = writeln!(s, "layer {} {} {}", l.rows, l.cols, l.activation.name());
            for row in l.weights.chunks_exact(l.cols.max(1)) {
                let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                let _ = writeln!(s, "{}", line.join(" "));
            }
            let line: Vec<String> = l.bias.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }
}

/// Runs `v` through every layer in order.
pub fn apply_stack<T: Scalar>(stack: &AffineStack<T>, v: &FeatureVector<T>) -> Result<FeatureVector<T>> {
    let mut x = v.values.clone();
    for layer in &stack.layers {
        check_len(layer.cols, x.len())?;
        x = layer.forward(&x);
    }
    Ok(FeatureVector {
        role: v.role,
        values: x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(role: FeatureRole, v: &[f64]) -> FeatureVector<f64> {
        FeatureVector::new(role, v.to_vec()).unwrap()
    }

    #[test]
    fn position_combination() {
        let a = fv(FeatureRole::VoxelSemantic, &[1.0, -2.0, 3.0]);
        let zero = FeatureVector::zeros(FeatureRole::Position, 3);
        assert_eq!(combine_position(&a, &zero).unwrap().values, a.values);
        let v = fv(FeatureRole::Position, &[0.5, 0.5, 0.5]);
        let z = FeatureVector::zeros(FeatureRole::VoxelSemantic, 3);
        assert_eq!(combine_position(&z, &v).unwrap().values, v.values);
        assert_eq!(combine_position(&a, &v).unwrap().values, vec![1.5, -1.5, 3.5]);
        let short = FeatureVector::zeros(FeatureRole::Position, 2);
        assert!(matches!(
            combine_position(&a, &short),
            Err(Error::LengthMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn fuse_hand_example() {
        let psem = fv(FeatureRole::PointSemantic, &[1.0, 2.0]);
        let ssem = fv(FeatureRole::SemanticGate, &[0.5, 1.0]);
        let pgeo = fv(FeatureRole::PointGeometric, &[3.0]);
        assert!(FeatureVector::new(FeatureRole::GeometricGate, vec![2.0]).is_err());
        let bad = FeatureVector {
            role: FeatureRole::GeometricGate,
            values: vec![2.0],
        };
        assert!(matches!(fuse(&psem, &ssem, &pgeo, &bad), Err(Error::Domain(_))));
        let sgeo = fv(FeatureRole::GeometricGate, &[1.0]);
        let out = fuse(&psem, &ssem, &pgeo, &sgeo).unwrap();
        assert_eq!(out.values, vec![0.5, 2.0, 3.0]);
        let (s, g) = split_fused(&out, 2).unwrap();
        assert_eq!(s.values, vec![0.5, 2.0]);
        assert_eq!(g.values, vec![3.0]);
    }

    #[test]
    fn fuse_default_lengths() {
        let n = FeatureRole::PointSemantic.default_len();
        let psem = fv(FeatureRole::PointSemantic, &vec![1.5; n]);
        let pgeo = fv(FeatureRole::PointGeometric, &vec![-0.5; n]);
        let ones = fv(FeatureRole::SemanticGate, &vec![1.0; n]);
        let zeros = FeatureVector::zeros(FeatureRole::SemanticGate, n);
        let out = fuse(&psem, &ones, &pgeo, &ones).unwrap();
        assert_eq!(out.len(), FeatureRole::Fused.default_len());
        assert_eq!(&out.values[..n], &psem.values[..]);
        assert_eq!(&out.values[n..], &pgeo.values[..]);
        let dead = fuse(&psem, &zeros, &pgeo, &zeros).unwrap();
        assert_eq!(dead.values, vec![0.0; 256]);
    }

    #[test]
    fn stack_examples() {
        let v = fv(FeatureRole::PointWise, &[1.0, -1.0]);
        let id = AffineStack::new(vec![AffineLayer::identity(2)]).unwrap();
        assert_eq!(apply_stack(&id, &v).unwrap().values, v.values);

        let neg = AffineLayer::new(2, 2, vec![-1.0, 0.0, 0.0, -1.0], vec![-5.0, -5.0], Activation::Relu)
            .unwrap();
        let s = AffineStack::new(vec![neg]).unwrap();
        assert_eq!(apply_stack(&s, &v).unwrap().values, vec![0.0, 0.0]);

        // [[2, 1], [0.5, -3]] [1, -1] + [0.25, 1] = [1.25, 4.5]; relu keeps both,
        // then [1, -1] . [1.25, 4.5] - 1 = -4.25 with no activation
        let l1 = AffineLayer::new(2, 2, vec![2.0, 1.0, 0.5, -3.0], vec![0.25, 1.0], Activation::Relu).unwrap();
        let l2 = AffineLayer::new(1, 2, vec![1.0, -1.0], vec![-1.0], Activation::None).unwrap();
        let s = AffineStack::new(vec![l1, l2]).unwrap();
        assert_eq!(apply_stack(&s, &v).unwrap().values, vec![-4.25]);
        let sig = AffineStack::new(vec![AffineLayer::new(1, 1, vec![0.0], vec![0.0], Activation::Sigmoid).unwrap()]).unwrap();
        assert_eq!(apply_stack(&sig, &fv(FeatureRole::PointWise, &[3.0])).unwrap().values, vec![0.5]);
    }

    #[test]
    fn stack_dimension_checks() {
        let l1 = AffineLayer::<f64>::identity(3);
        let l2 = AffineLayer::<f64>::identity(2);
        assert!(AffineStack::new(vec![l1.clone(), l2]).is_err());
        let s = AffineStack::new(vec![l1]).unwrap();
        assert!(apply_stack(&s, &fv(FeatureRole::PointWise, &[1.0])).is_err());
        assert!(AffineLayer::new(2, 2, vec![1.0; 3], vec![0.0; 2], Activation::None).is_err());
    }

    #[test]
    fn text_format_round_trip() {
        let l1 = AffineLayer::new(2, 3, vec![1.0, 2.0, 3.0, -4.0, 0.5, 0.25], vec![0.0, -1.5], Activation::Relu)
            .unwrap();
        let l2 = AffineLayer::new(1, 2, vec![1.0, 1.0], vec![0.125], Activation::Sigmoid).unwrap();
        let s = AffineStack::new(vec![l1, l2]).unwrap();
        let text = s.to_text();
        assert_eq!(AffineStack::<f64>::parse(&text).unwrap(), s);
        let with_comments = "# two by one\naffine_stack 1\nlayer 1 2 none # inline\n3 4\n0.5\n";
        let p = AffineStack::<f64>::parse(with_comments).unwrap();
        assert_eq!(p.layers[0].weights, vec![3.0, 4.0]);
        assert!(AffineStack::<f64>::parse("affine_stack 1\nlayer 1 2 none\n3\n").is_err());
        assert!(AffineStack::<f64>::parse("affine_stack 1\nlayer 1 1 tanh\n3\n1\n").is_err());
        assert!(AffineStack::<f64>::parse("affine_stack 0\nextra").is_err());
    }
}
