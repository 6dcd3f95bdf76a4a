//! Direct loop-nest references the interpreter is checked against.

use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};
use crate::program::{OperatorKind, TensorProgramSpec};

/// `C[m,n] = Σ_k A[m,k] · B[k,n]`.
pub fn naive_gemm<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
        return Err(Error::ShapeMismatch(format!(
            "gemm needs two matrices, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    };
    if k != k2 {
        return Err(Error::ShapeMismatch(format!("inner dimensions {k} and {k2} differ")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::zero_acc();
            for p in 0..k {
                acc = T::acc_mul_add(acc, ad[i * k + p], bd[p * n + j]);
            }
            out.push(T::from_acc(acc));
        }
    }
    Tensor::from_vec(vec![m, n], out)
}

/// Direct convolution without padding:
/// `O[n,co,h,w] = Σ_{ci,kh,kw} I[n,ci,h·s+kh,w·s+kw] · W[co,ci,kh,kw]`.
pub fn naive_conv2d<T: Element>(input: &Tensor<T>, weights: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let (&[n, ci, hi, wi], &[co, ci2, kh, kw]) = (input.shape(), weights.shape()) else {
        return Err(Error::ShapeMismatch(format!(
            "conv2d needs 4-d input and weights, got {:?} and {:?}",
            input.shape(),
            weights.shape()
        )));
    };
    if stride == 0 {
        return Err(Error::ShapeMismatch("stride must be at least 1".into()));
    }
    if ci != ci2 {
        return Err(Error::ShapeMismatch(format!(
            "input has {ci} channels, weights expect {ci2}"
        )));
    }
    if kh == 0 || kw == 0 || hi < kh || wi < kw {
        return Err(Error::ShapeMismatch(format!(
            "kernel {kh}x{kw} does not fit input {hi}x{wi}"
        )));
    }
    let (ho, wo) = ((hi - kh) / stride + 1, (wi - kw) / stride + 1);
    let mut out = Tensor::zeros(vec![n, co, ho, wo]);
    for b in 0..n {
        for o in 0..co {
            for y in 0..ho {
                for x in 0..wo {
                    let mut acc = T::zero_acc();
                    for c in 0..ci {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                acc = T::acc_mul_add(
                                    acc,
                                    input.get(&[b, c, y * stride + dy, x * stride + dx]),
                                    weights.get(&[o, c, dy, dx]),
                                );
                            }
                        }
                    }
                    out.set(&[b, o, y, x], T::from_acc(acc));
                }
            }
        }
    }
    Ok(out)
}

/// Oracle output of `prog` on `inputs`.
pub fn reference_output<T: Element>(prog: &TensorProgramSpec, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let [a, b] = inputs else {
        return Err(Error::ShapeMismatch(format!("expected 2 inputs, got {}", inputs.len())));
    };
    match prog.operator_kind {
        OperatorKind::Gemm => naive_gemm(a, b),
        OperatorKind::Conv2d => naive_conv2d(a, b, 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_scalar() {
        let a = Tensor::<i32>::from_vec(vec![2, 2], vec![3, -1, 4, 7]).unwrap();
        let id = Tensor::<i32>::from_fn(vec![2, 2], |i| i32::from(i[0] == i[1]));
        assert_eq!(naive_gemm(&a, &id).unwrap(), a);
        let x = Tensor::<i32>::from_vec(vec![1, 1], vec![3]).unwrap();
        let y = Tensor::<i32>::from_vec(vec![1, 1], vec![4]).unwrap();
        assert_eq!(naive_gemm(&x, &y).unwrap().data(), &[12]);
    }

    #[test]
    fn gemm_matches_outer_product_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Tensor::<i32>::random(vec![7, 5], &mut rng);
        let b = Tensor::<i32>::random(vec![5, 9], &mut rng);
        // Sum of rank-1 updates, a different loop order from the reference.
        let mut c = Tensor::<i32>::zeros(vec![7, 9]);
        for p in 0..5 {
            for i in 0..7 {
                for j in 0..9 {
                    let v = c.get(&[i, j]).mul_add(a.get(&[i, p]), b.get(&[p, j]));
                    c.set(&[i, j], v);
                }
            }
        }
        assert_eq!(naive_gemm(&a, &b).unwrap(), c);
    }

    #[test]
    fn gemm_shape_errors() {
        let a = Tensor::<i32>::zeros(vec![2, 3]);
        assert!(naive_gemm(&a, &a).is_err());
        assert!(naive_gemm(&Tensor::<i32>::zeros(vec![2]), &a).is_err());
    }

    #[test]
    fn unit_kernel_copies_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = Tensor::<i32>::random(vec![2, 3, 4, 5], &mut rng);
        // Output channel o copies input channel o.
        let w = Tensor::<i32>::from_fn(vec![3, 3, 1, 1], |i| i32::from(i[0] == i[1]));
        assert_eq!(naive_conv2d(&input, &w, 1).unwrap(), input);
    }

    #[test]
    fn all_ones_interior_counts_the_window() {
        let input = Tensor::<i32>::from_fn(vec![1, 4, 6, 6], |_| 1);
        let w = Tensor::<i32>::from_fn(vec![2, 4, 3, 3], |_| 1);
        let out = naive_conv2d(&input, &w, 1).unwrap();
        assert_eq!(out.shape(), &[1, 2, 4, 4]);
        assert!(out.data().iter().all(|&v| v == 3 * 3 * 4));
    }

    #[test]
    fn conv_matches_im2col_gemm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, ci, hi, wi, co, kh, kw, s) = (2, 3, 7, 6, 4, 3, 2, 2);
        let input = Tensor::<i32>::random(vec![n, ci, hi, wi], &mut rng);
        let w = Tensor::<i32>::random(vec![co, ci, kh, kw], &mut rng);
        let (ho, wo) = ((hi - kh) / s + 1, (wi - kw) / s + 1);
        let patches = Tensor::<i32>::from_fn(vec![ci * kh * kw, n * ho * wo], |i| {
            let (c, dy, dx) = (i[0] / (kh * kw), i[0] / kw % kh, i[0] % kw);
            let (b, y, x) = (i[1] / (ho * wo), i[1] / wo % ho, i[1] % wo);
            input.get(&[b, c, y * s + dy, x * s + dx])
        });
        let wmat = Tensor::<i32>::from_vec(vec![co, ci * kh * kw], w.data().to_vec()).unwrap();
        let prod = naive_gemm(&wmat, &patches).unwrap();
        let out = naive_conv2d(&input, &w, s).unwrap();
        for b in 0..n {
            for o in 0..co {
                for y in 0..ho {
                    for x in 0..wo {
                        assert_eq!(out.get(&[b, o, y, x]), prod.get(&[o, (b * ho + y) * wo + x]));
                    }
                }
            }
        }
    }

    #[test]
    fn conv_shape_errors() {
        let input = Tensor::<i32>::zeros(vec![1, 2, 3, 3]);
        assert!(naive_conv2d(&input, &Tensor::zeros(vec![1, 3, 1, 1]), 1).is_err());
        assert!(naive_conv2d(&input, &Tensor::zeros(vec![1, 2, 4, 1]), 1).is_err());
        assert!(naive_conv2d(&input, &Tensor::zeros(vec![1, 2, 1, 1]), 0).is_err());
    }
}
