use crate::error::{Error, Result};
use crate::nnet::graph::{Graph, OpKind, OpNode, Src};

/// Folds every batch norm into the convolution feeding it:
/// `W' = s·W`, `b' = s·(b − μ) + β` with `s = γ / √(σ² + ε)` per output channel.
/// Consumers of the norm read the convolution directly afterwards.
pub fn fuse_bn(g: &Graph) -> Result<Graph> {
    let nodes = g.nodes();
    let mut consumers = vec![0usize; nodes.len()];
    for n in nodes {
        for s in &n.inputs {
            if let Src::Node(j) = s {
                consumers[*j] += 1;
            }
        }
    }

    let mut params = g.params().clone();
    // old index -> new source
    let mut remap: Vec<Src> = Vec::with_capacity(nodes.len());
    let mut kept: Vec<OpNode> = Vec::with_capacity(nodes.len());
    for n in nodes {
        if let OpKind::BatchNorm { channels, eps } = n.kind {
            let conv_idx = match n.inputs[0] {
                Src::Node(j) if nodes[j].kind.is_conv() => j,
                _ => {
                    return Err(Error::Fusion {
                        node: n.name.clone(),
                        msg: "input is not a convolution".into(),
                    })
                }
            };
            if consumers[conv_idx] != 1 {
                return Err(Error::Fusion {
                    node: n.name.clone(),
                    msg: format!("convolution `{}` has other consumers", nodes[conv_idx].name),
                });
            }
            let conv = &nodes[conv_idx];
            let bn_param = |suffix: &str| g.param(&format!("{}.{suffix}", n.name)).map(|p| p.data.clone());
            let (gamma, beta, mean, var) = (
                bn_param("bn_gamma")?,
                bn_param("bn_beta")?,
                bn_param("bn_mean")?,
                bn_param("bn_var")?,
            );
            let scale: Vec<f32> = (0..channels).map(|c| gamma[c] / (var[c] + eps).sqrt()).collect();

            let wkey = format!("{}.weight", conv.name);
            let w = params.get_mut(&wkey).expect("validated conv weight");
            match conv.kind {
                OpKind::Conv2d { out_ch, .. } => {
                    check_width(&n.name, out_ch, channels)?;
                    let per_out = w.data.len() / out_ch;
                    for (oc, chunk) in w.data.chunks_mut(per_out).enumerate() {
                        chunk.iter_mut().for_each(|v| *v *= scale[oc]);
                    }
                }
                OpKind::ConvTranspose2d { in_ch, out_ch } => {
                    check_width(&n.name, out_ch, channels)?;
                    // Layout [in][out][2][2]: every 4-tap chunk belongs to one output channel.
                    debug_assert_eq!(w.data.len(), in_ch * out_ch * 4);
                    for (j, taps) in w.data.chunks_mut(4).enumerate() {
                        taps.iter_mut().for_each(|v| *v *= scale[j % out_ch]);
                    }
                }
                _ => unreachable!("checked is_conv"),
            }
            let b = params.get_mut(&format!("{}.bias", conv.name)).expect("validated conv bias");
            for c in 0..channels {
                b.data[c] = scale[c] * (b.data[c] - mean[c]) + beta[c];
            }
            for suffix in ["bn_gamma", "bn_beta", "bn_mean", "bn_var"] {
                params.remove(&format!("{}.{suffix}", n.name));
            }
            remap.push(remap[conv_idx]);
        } else {
            let inputs = n
                .inputs
                .iter()
                .map(|s| match s {
                    Src::Input => Src::Input,
                    Src::Node(j) => remap[*j],
                })
                .collect();
            kept.push(OpNode {
                name: n.name.clone(),
                kind: n.kind,
                inputs,
            });
            remap.push(Src::Node(kept.len() - 1));
        }
    }
    let fused = Graph::from_parts(kept, params, g.input_channels(), g.spatial_multiple());
    fused.validate()?;
    Ok(fused)
}

fn check_width(node: &str, conv_out: usize, bn_ch: usize) -> Result<()> {
    if conv_out != bn_ch {
        return Err(Error::Fusion {
            node: node.to_string(),
            msg: format!("normalizes {bn_ch} channels but the convolution emits {conv_out}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::unet::{build_unet_seeded, fit_batch_norm_stats, init_he, randomize_batch_norm, scale_head, UNetConfig, BN_EPS};
    use crate::types::Tensor;

    fn conv_bn_graph() -> Graph {
        let mut g = Graph::new(2, 1);
        let c = g
            .push(
                "c",
                OpKind::Conv2d { in_ch: 2, out_ch: 3, kernel: 3, stride: 1, padding: 1 },
                &[Src::Input],
            )
            .unwrap();
        let b = g.push("bn", OpKind::BatchNorm { channels: 3, eps: BN_EPS }, &[c]).unwrap();
        g.push("r", OpKind::Relu, &[b]).unwrap();
        init_he(&mut g, 3, true);
        g
    }

    #[test]
    fn identity_norm_leaves_weights() {
        let mut g = conv_bn_graph();
        g.set_param("bn.bn_var", vec![1.0 - BN_EPS; 3]).unwrap();
        let before = g.param("c.weight").unwrap().clone();
        let f = fuse_bn(&g).unwrap();
        let after = f.param("c.weight").unwrap();
        for (a, b) in before.data.iter().zip(&after.data) {
            assert!((a - b).abs() <= 1e-7 * a.abs().max(1.0));
        }
        assert_eq!(f.nodes().len(), 2);
        assert!(f.params().keys().all(|k| !k.contains("bn_")));
    }

    #[test]
    fn fused_unet_matches_and_drops_norms() {
        let mut g = build_unet_seeded(&UNetConfig::anvil_s(), 11).unwrap();
        init_he(&mut g, 12, true);
        randomize_batch_norm(&mut g, 13);
        let calib = Tensor::new([1, 6, 32, 32], (0..6 * 1024).map(|i| ((i * 53) % 97) as f32 / 97.0).collect()).unwrap();
        fit_batch_norm_stats(&mut g, &calib).unwrap();
        scale_head(&mut g, &calib, 0.5).unwrap();
        let f = fuse_bn(&g).unwrap();
        let n_bn = g.nodes().iter().filter(|n| matches!(n.kind, OpKind::BatchNorm { .. })).count();
        assert_eq!(g.nodes().len() - f.nodes().len(), n_bn);
        f.lint_deployable().unwrap();
        let x = Tensor::new([1, 6, 32, 32], (0..6 * 1024).map(|i| ((i * 37) % 101) as f32 / 101.0).collect()).unwrap();
        let d = g.forward(&x).unwrap().max_abs_diff(&f.forward(&x).unwrap());
        assert!(d < 1.5e-5, "{d}");
    }

    #[test]
    fn norm_after_relu_is_rejected() {
        let mut g = Graph::new(1, 1);
        let r = g.push("r", OpKind::Relu, &[Src::Input]).unwrap();
        g.push("bn", OpKind::BatchNorm { channels: 1, eps: 1e-5 }, &[r]).unwrap();
        assert!(matches!(fuse_bn(&g), Err(Error::Fusion { .. })));
    }

    #[test]
    fn shared_conv_output_is_rejected() {
        let mut g = conv_bn_graph();
        g.push("r2", OpKind::Relu, &[Src::Node(0)]).unwrap();
        assert!(matches!(fuse_bn(&g), Err(Error::Fusion { .. })));
    }
}
