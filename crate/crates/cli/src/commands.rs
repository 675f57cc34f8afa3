use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use spac_core::codec::train::{write_log_csv, TrainState};
use spac_core::codec::{
    decode, encode, rd_points, EncodeOptions, PreparedCloud, Stream, TrainConfig, Trainer,
};
use spac_core::fs::{high_point_indices, GroupSpec};
use spac_core::layers::decompose;
use spac_core::metrics::{bd_psnr, bd_rate, parse_rd_report, psnr_yuv, rd_report, BdMethod, LabeledCurve, RdRow};
use spac_core::nn::{ModelWeights, NetworkConfig};
use spac_core::ply::{load_ply, save_ply, PlyFormat};
use spac_core::Error as CoreError;

use crate::{CliError, Command, SplitArgs};

pub struct Context {
    pub seed: u64,
    pub verbose: u8,
}

impl Context {
    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose > 0 {
            eprintln!("{}", msg.as_ref());
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(CoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{} is not a file", path.display())))
    }
}

fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(CliError::Usage(format!("directory {} does not exist", p.display())))
        }
        _ => Ok(()),
    }
}

fn validate_split(split: &SplitArgs) -> Result<GroupSpec> {
    let spec = split.spec();
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(spec)
}

fn emit(value: &Value, output: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    match output {
        Some(p) => fs::write(p, text + "\n").map_err(|e| io_err(p, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn psnr_json(p: &spac_core::metrics::YuvPsnr) -> Value {
    json!({ "y": p.y, "u": p.u, "v": p.v, "yuv": p.combined })
}

pub fn dispatch(command: Command, ctx: &Context) -> Result<()> {
    match command {
        Command::Encode {
            input,
            model,
            output,
            lambda_index,
            layers,
            split,
            report,
        } => {
            require_file(&input)?;
            require_file(&model)?;
            require_parent(&output)?;
            let opts = EncodeOptions {
                spec: validate_split(&split)?,
                lambda_index,
            };
            let weights = ModelWeights::load(&model)?;
            let nl = weights.config().layers;
            if layers.is_some_and(|l| l != nl) {
                return Err(CliError::Usage(format!(
                    "--layers {} but the model codes {nl} layers",
                    layers.unwrap_or_default()
                )));
            }
            let pc = load_ply(&input)?;
            let enc = encode(&pc, &weights, &opts)?;
            fs::write(&output, &enc.bytes).map_err(|e| io_err(&output, e))?;
            ctx.note(format!(
                "{} points, {} bytes, {:.4} bpp",
                pc.len(),
                enc.bytes.len(),
                (enc.bytes.len() * 8) as f64 / pc.len() as f64
            ));
            if let Some(report) = report {
                require_parent(&report)?;
                let rows = rd_points(&pc, &weights, &opts)?
                    .into_iter()
                    .map(|p| RdRow {
                        bpp: p.bpp,
                        y: p.psnr.y,
                        u: p.psnr.u,
                        v: p.psnr.v,
                        yuv: p.psnr.combined,
                    })
                    .collect();
                let label = input
                    .file_stem()
                    .map_or_else(|| "spac".to_string(), |s| s.to_string_lossy().into_owned());
                rd_report(&[LabeledCurve { label, rows }], &report)?;
            }
            Ok(())
        }

        Command::Decode {
            input,
            geometry,
            model,
            output,
            upto_layer,
        } => {
            require_file(&input)?;
            require_file(&geometry)?;
            require_file(&model)?;
            require_parent(&output)?;
            let bytes = fs::read(&input).map_err(|e| io_err(&input, e))?;
            let weights = ModelWeights::load(&model)?;
            let geom = load_ply(&geometry)?;
            let dec = decode(&bytes, &geom, &weights, upto_layer)?;
            ctx.note(format!("decoded {} points at layer {upto_layer}", dec.cloud.len()));
            save_ply(&dec.cloud, &output, PlyFormat::BinaryLittleEndian)?;
            Ok(())
        }

        Command::Train {
            input,
            output,
            lambda_index,
            layers,
            split,
            steps,
            learning_rate,
            toy,
            resume,
            checkpoint_every,
        } => {
            if !input.is_dir() {
                return Err(CliError::Usage(format!("{} is not a directory", input.display())));
            }
            if checkpoint_every == 0 {
                return Err(CliError::Usage("--checkpoint-every must be positive".into()));
            }
            let spec = validate_split(&split)?;
            let base = if toy { NetworkConfig::toy() } else { NetworkConfig::default() };
            let network = base.with_layers(layers);
            network.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let mut cfg = TrainConfig::for_lambda_index(lambda_index).map_err(|e| CliError::Usage(e.to_string()))?;
            cfg.steps = steps;
            cfg.seed = ctx.seed;
            if let Some(lr) = learning_rate {
                cfg.learning_rate = lr;
            }
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            fs::create_dir_all(&output).map_err(|e| io_err(&output, e))?;

            let mut paths: Vec<PathBuf> = fs::read_dir(&input)
                .map_err(|e| io_err(&input, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ply")))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(CliError::Usage(format!("no .ply files in {}", input.display())));
            }
            let clouds = paths
                .iter()
                .map(|p| {
                    ctx.note(format!("preparing {}", p.display()));
                    Ok(PreparedCloud::new(&load_ply(p)?, layers, &spec)?)
                })
                .collect::<Result<Vec<_>>>()?;

            let state_path = output.join("state.json");
            let mut trainer = if resume {
                let state = TrainState::load(&state_path)?;
                if state.network != network {
                    return Err(CliError::Usage("checkpoint network differs from the requested one".into()));
                }
                Trainer::from_state(state, clouds)?
            } else {
                Trainer::new(&network, cfg, clouds)?
            };
            let save = |t: &Trainer| -> Result<()> {
                t.state().save(&state_path)?;
                t.weights()?.save(output.join("model.spacw"))?;
                write_log_csv(t.log(), output.join("log.csv"))?;
                Ok(())
            };
            while trainer.step_index() < steps {
                let r = trainer.step()?;
                if ctx.verbose > 0 && (r.step % 10 == 0 || ctx.verbose > 1) {
                    eprintln!(
                        "step {} D {:.3} entropy {:.4} hyper {:.4} total {:.3}",
                        r.step, r.distortion, r.entropy_bits, r.hyper_bits, r.total
                    );
                }
                if trainer.step_index() % checkpoint_every == 0 {
                    save(&trainer)?;
                }
            }
            save(&trainer)
        }

        Command::Eval {
            reference,
            test,
            output,
        } => {
            require_file(&reference)?;
            require_file(&test)?;
            if let Some(o) = &output {
                require_parent(o)?;
            }
            let r = load_ply(&reference)?;
            let t = load_ply(&test)?;
            let p = psnr_yuv(&r, &t)?;
            let mut v = psnr_json(&p);
            v["points"] = json!(r.len());
            emit(&v, output.as_deref())
        }

        Command::Sample {
            input,
            output,
            layers,
            split,
        } => {
            require_file(&input)?;
            let spec = validate_split(&split)?;
            let pc = load_ply(&input)?;
            let stack = decompose(&pc, layers, &spec)?;
            fs::create_dir_all(&output).map_err(|e| io_err(&output, e))?;
            let sizes = stack.layer_sizes();
            let mut per_layer = Vec::new();
            for l in 1..=layers {
                let p_l = stack.layer_cloud(l)?;
                save_ply(&p_l, output.join(format!("layer{l}.ply")), PlyFormat::BinaryLittleEndian)?;
                let coded = stack.coded_set(l)?;
                save_ply(coded, output.join(format!("coded{l}.ply")), PlyFormat::BinaryLittleEndian)?;
                let mut entry = json!({ "layer": l, "points": sizes[l - 1], "coded": coded.len() });
                if l < layers && !p_l.is_empty() {
                    let (_, s) = high_point_indices(&p_l, &spec)?;
                    entry["split"] = json!({
                        "groups": s.groups,
                        "selected": s.selected,
                        "selected_fraction": s.selected_fraction(),
                        "kept_energy": s.kept_energy,
                        "total_energy": s.total_energy,
                    });
                }
                per_layer.push(entry);
            }
            let stats = json!({
                "points": pc.len(),
                "omega": spec.omega,
                "q": spec.q_percent,
                "tau": spec.tau,
                "layers": per_layer,
            });
            ctx.note(format!("layer sizes {sizes:?}"));
            emit(&stats, Some(&output.join("stats.json")))
        }

        Command::Bd {
            reference,
            test,
            pchip,
            output,
        } => {
            require_file(&reference)?;
            require_file(&test)?;
            let method = if pchip { BdMethod::Pchip } else { BdMethod::Cubic };
            let refs = parse_rd_report(&reference)?;
            let anchor = refs
                .first()
                .ok_or_else(|| CoreError::Report(format!("{} has no rows", reference.display())))?;
            let tests = parse_rd_report(&test)?;
            if tests.is_empty() {
                return Err(CoreError::Report(format!("{} has no rows", test.display())).into());
            }
            let (ay, ayuv) = (anchor.y_curve()?, anchor.yuv_curve()?);
            let rows = tests
                .iter()
                .map(|c| {
                    let (ty, tyuv) = (c.y_curve()?, c.yuv_curve()?);
                    Ok(json!({
                        "label": c.label,
                        "bd_rate_y": bd_rate(&ay, &ty, method)?,
                        "bd_psnr_y": bd_psnr(&ay, &ty, method)?,
                        "bd_rate_yuv": bd_rate(&ayuv, &tyuv, method)?,
                        "bd_psnr_yuv": bd_psnr(&ayuv, &tyuv, method)?,
                    }))
                })
                .collect::<Result<Vec<_>>>()?;
            let method = if pchip { "pchip" } else { "cubic" };
            emit(
                &json!({ "reference": anchor.label, "method": method, "results": rows }),
                output.as_deref(),
            )
        }

        Command::Info { input } => {
            require_file(&input)?;
            let bytes = fs::read(&input).map_err(|e| io_err(&input, e))?;
            let stream = Stream::parse(&bytes)?;
            let h = &stream.header;
            let chunks: Vec<Value> = stream
                .chunks
                .iter()
                .zip(&stream.chunk_ends)
                .map(|((kind, body), end)| json!({ "kind": format!("{kind:?}"), "bytes": body.len(), "end": end }))
                .collect();
            emit(
                &json!({
                    "version": h.version,
                    "bitdepth": h.bitdepth,
                    "omega": h.omega,
                    "q": h.q_percent(),
                    "tau": h.tau(),
                    "layers": h.layers,
                    "ordering": format!("{:?}", h.ordering),
                    "model_hash": format!("{:016x}", h.model_hash),
                    "lambda_index": h.lambda_index,
                    "points": h.points,
                    "layer_counts": h.layer_counts,
                    "header_bytes": stream.header_len,
                    "stream_bytes": bytes.len(),
                    "chunks": chunks,
                    "complete": stream.complete,
                    "decodable_upto": stream.decodable_upto(),
                }),
                None,
            )
        }
    }
}
