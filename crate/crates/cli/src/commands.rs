use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use girp::bench::{self, BenchError, BudgetModel, LatencyReport, Link, Target};
use girp::client::script::{run_script, Script};
use girp::client::{ClientConfig, HeartbeatConfig, OffloadClient};
use girp::executor::open_backend;
use girp::interp::{dry_run, InterpLimits, SubsetReport};
use girp::session::{Server, ServerConfig};
use girp::spirv::{reflect, DescriptorSlot, ExecutionModel, SpirvModule};
use girp::wire::transport::TcpTransport;
use girp::wire::SessionId;

use crate::config::Config;
use crate::{BenchArgs, BenchScenario, Failure};

const REMOTE_TIMEOUT: Duration = Duration::from_secs(30);

pub fn parse_groups(s: &str) -> Result<[u32; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [x, y, z] = parts[..] else {
        return Err(format!("expected X,Y,Z, got {s:?}"));
    };
    let p = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
    Ok([p(x)?, p(y)?, p(z)?])
}

pub fn parse_resolution(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once('x').ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let p = |v: &str| match v.parse::<u32>() {
        Ok(0) | Err(_) => Err(format!("bad dimension {v:?}")),
        Ok(n) => Ok(n),
    };
    Ok((p(w)?, p(h)?))
}

pub fn parse_session_id(s: &str) -> Result<SessionId, String> {
    SessionId::from_hex(s).ok_or_else(|| format!("expected 32 hex digits, got {s:?}"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferArg {
    pub slot: DescriptorSlot,
    pub file: PathBuf,
}

pub fn parse_buffer_arg(s: &str) -> Result<BufferArg, String> {
    let mut it = s.splitn(3, ':');
    let (Some(set), Some(binding), Some(file)) = (it.next(), it.next(), it.next()) else {
        return Err(format!("expected set:binding:file, got {s:?}"));
    };
    let n = |v: &str| v.parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
    if file.is_empty() {
        return Err("empty file name".into());
    }
    Ok(BufferArg {
        slot: DescriptorSlot::new(n(set)?, n(binding)?),
        file: file.into(),
    })
}

fn read_module(path: &Path) -> Result<(Vec<u8>, SpirvModule), Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::io(path.display(), e))?;
    let module = SpirvModule::from_bytes(&bytes).map_err(Failure::of)?;
    Ok((bytes, module))
}

fn model_name(m: ExecutionModel) -> String {
    match m {
        ExecutionModel::GLCompute => "GLCompute".into(),
        ExecutionModel::Vertex => "Vertex".into(),
        ExecutionModel::Fragment => "Fragment".into(),
        ExecutionModel::Other(n) => format!("Other({n})"),
    }
}

pub fn inspect(path: &Path) -> Result<(), Failure> {
    let (_, module) = read_module(path)?;
    let info = reflect(&module).map_err(Failure::of)?;
    let mut out = String::new();
    out.push_str(&format!("version {}.{}\n", info.version.0, info.version.1));
    out.push_str(&format!("hash {}\n", module.content_hash()));
    out.push_str(&format!("bytes {}\n", module.byte_len()));
    for ep in &info.entry_points {
        out.push_str(&format!("entry {:?} {}\n", ep.name, model_name(ep.execution_model)));
        if let Some([x, y, z]) = ep.local_size {
            out.push_str(&format!("local_size {:?} ({x},{y},{z})\n", ep.name));
        }
        if ep.execution_model == ExecutionModel::GLCompute {
            let subset = match dry_run(&module, &ep.name) {
                Ok(SubsetReport::Compliant) => "supported".to_string(),
                Ok(SubsetReport::NonCompliant(ops)) => {
                    let ops: Vec<String> = ops.iter().map(u16::to_string).collect();
                    format!("unsupported opcodes {}", ops.join(","))
                }
                Err(e) => format!("rejected {e}"),
            };
            out.push_str(&format!("interpreter {:?} {subset}\n", ep.name));
        }
    }
    let mut bindings = info.bindings.clone();
    bindings.sort_by_key(|b| (b.set, b.binding));
    for b in &bindings {
        out.push_str(&format!("binding {}:{} {:?}\n", b.set, b.binding, b.kind));
    }
    print!("{out}");
    Ok(())
}

pub fn run_local(
    config: &Config,
    path: &Path,
    entry: &str,
    groups: [u32; 3],
    buffers: &[BufferArg],
) -> Result<(), Failure> {
    let (_, module) = read_module(path)?;
    let mut ex = open_backend(config.backend, InterpLimits::default()).map_err(Failure::of)?;
    let hash = ex.load(&module).map_err(Failure::of)?;
    let pipeline = ex.create_pipeline(&hash, entry).map_err(Failure::of)?;
    let mut data = Vec::with_capacity(buffers.len());
    for b in buffers {
        let bytes = std::fs::read(&b.file).map_err(|e| Failure::io(b.file.display(), e))?;
        data.push((b.slot, bytes));
    }
    let mut views: Vec<(DescriptorSlot, &mut [u8])> = data.iter_mut().map(|(s, d)| (*s, d.as_mut_slice())).collect();
    let timing = ex.dispatch(pipeline.id, groups, &mut views).map_err(Failure::of)?;
    for (b, (_, bytes)) in buffers.iter().zip(&data) {
        std::fs::write(&b.file, bytes).map_err(|e| Failure::io(b.file.display(), e))?;
        println!("buffer {}:{} {} bytes > {}", b.slot.set, b.slot.binding, bytes.len(), b.file.display());
    }
    println!(
        "dispatch {entry} groups={},{},{} prepare_ns={} execute_ns={} readback_ns={}",
        groups[0], groups[1], groups[2], timing.prepare_ns, timing.execute_ns, timing.readback_ns
    );
    Ok(())
}

pub fn serve(config: &Config) -> Result<(), Failure> {
    let server = Server::new(ServerConfig {
        backend: config.backend,
        max_payload: config.max_frame_bytes,
        ..ServerConfig::default()
    })
    .map_err(Failure::of)?;
    let handle = Arc::new(server)
        .spawn_tcp(&config.listen_addr)
        .map_err(|e| Failure::io(&config.listen_addr, e))?;
    println!("listening on {}", handle.addr());
    let _ = std::io::stdout().flush();
    handle.wait();
    Ok(())
}

pub fn client_run(config: &Config, script_path: &Path, keep_session: bool) -> Result<(), Failure> {
    let text = std::fs::read_to_string(script_path).map_err(|e| Failure::io(script_path.display(), e))?;
    let script = Script::parse(&text).map_err(Failure::of)?;
    let client_config = ClientConfig {
        heartbeat: HeartbeatConfig {
            interval: config.heartbeat_interval,
            miss_threshold: config.miss_threshold,
        },
        ..ClientConfig::default()
    };
    let mut client = OffloadClient::connect(&config.connect_addr, client_config).map_err(Failure::of)?;
    println!("session {}", client.session_id());
    let base = script_path.parent().unwrap_or(Path::new("."));
    let result = run_script(&mut client, &script, base, |step| {
        println!("{step}");
        let _ = std::io::stdout().flush();
    });
    for e in client.events() {
        log::info!("transition {:?} -> {:?}: {}", e.from, e.to, e.reason);
    }
    if !keep_session {
        client.close();
    }
    result.map_err(Failure::of)
}

fn ms(ns: u64) -> f64 {
    ns as f64 / 1e6
}

pub fn migrate(from: &str, to: &str, session: SessionId, keep_source: bool) -> Result<(), Failure> {
    let source = TcpTransport::connect(from, REMOTE_TIMEOUT).map_err(|e| Failure::of(girp::client::ClientError::from(e)))?;
    let mut a = Link::resume(Box::new(source), session, REMOTE_TIMEOUT).map_err(Failure::of)?;
    let mut b = Link::connect(to, REMOTE_TIMEOUT).map_err(Failure::of)?;
    let t0 = Instant::now();
    let snapshot = a.export().map_err(Failure::of)?;
    let t1 = Instant::now();
    let bytes = snapshot.len();
    let import_ns = b.import(snapshot).map_err(Failure::of)?;
    let t2 = Instant::now();
    if !keep_source {
        a.close_session().map_err(Failure::of)?;
    }
    let export_ns = (t1 - t0).as_nanos() as u64;
    let round_trip = (t2 - t1).as_nanos() as u64;
    println!("session {}", b.session());
    println!("snapshot_bytes {bytes}");
    println!("export_ms {:.3}", ms(export_ns));
    println!("transfer_ms {:.3}", ms(round_trip.saturating_sub(import_ns)));
    println!("import_ms {:.3}", ms(import_ns));
    println!("total_ms {:.3}", ms((t2 - t0).as_nanos() as u64));
    Ok(())
}

fn target_of(config: &Config, spec: &str) -> Result<Target, Failure> {
    if spec == "local" {
        // The local target is the interpreter, so a gpu request fails here.
        open_backend(config.backend, InterpLimits::default()).map_err(Failure::of)?;
        return Ok(Target::Local(InterpLimits::default()));
    }
    Ok(Target::Remote {
        addr: spec.to_string(),
        timeout: REMOTE_TIMEOUT,
    })
}

fn emit(args: &BenchArgs, reports: &[LatencyReport], extra: serde_json::Map<String, serde_json::Value>) {
    if args.json {
        let mut v = reports.last().expect("at least one report").json(args.raw);
        let obj = v.as_object_mut().expect("report is an object");
        if reports.len() > 1 {
            let phases: Vec<serde_json::Value> = reports[..reports.len() - 1].iter().map(|r| r.json(args.raw)).collect();
            obj.insert("phases".into(), phases.into());
        }
        obj.extend(extra);
        println!("{}", serde_json::to_string(&v).expect("json"));
    } else {
        print!("{}", bench::render_table(reports));
        for (k, v) in extra {
            println!("{k}: {v}");
        }
    }
}

pub fn bench(config: &Config, args: &BenchArgs) -> Result<(), Failure> {
    let target = target_of(config, &args.target)?;
    log::info!(
        "bench {:?} target={} iterations={} warmup={}",
        args.scenario,
        args.target,
        args.iterations,
        args.warmup
    );
    let bench_err = |e: BenchError| Failure::of(e);
    match args.scenario {
        BenchScenario::ColdStart => {
            let r = bench::run_cold_start(&target, args.iterations, args.warmup).map_err(bench_err)?;
            emit(args, &[r], Default::default());
        }
        BenchScenario::FrameDraw => {
            let r = bench::run_frame_draw(&target, args.iterations, args.warmup, args.resolution).map_err(bench_err)?;
            let model = BudgetModel {
                refresh_hz: args.refresh_hz,
                sync_ms: args.sync_ms,
                access_ms_uplink: args.access_uplink_ms,
                access_ms_downlink: args.access_downlink_ms,
            };
            let verdict = bench::check_budget(r.stats.p99, &model).map_err(bench_err)?;
            let mut extra = serde_json::Map::new();
            extra.insert("resolution".into(), format!("{}x{}", args.resolution.0, args.resolution.1).into());
            extra.insert("fits_budget".into(), verdict.fits.into());
            emit(args, &[r], extra);
            if !args.json {
                print!("{}", verdict.render());
            }
        }
        BenchScenario::Rtt => {
            let r = bench::run_rtt(&target, args.iterations, args.warmup).map_err(bench_err)?;
            emit(args, &[r], Default::default());
        }
        BenchScenario::Migrate => {
            let mut a = target.link().map_err(Failure::of)?;
            let mut b = match &args.peer {
                Some(peer) => Link::connect(peer, REMOTE_TIMEOUT),
                None => target.link(),
            }
            .map_err(Failure::of)?;
            bench::populate_migration_session(&mut a).map_err(bench_err)?;
            let r = bench::run_migration_bench(&mut a, &mut b, args.iterations, args.warmup, args.tamper_every)
                .map_err(bench_err)?;
            a.close_session().map_err(Failure::of)?;
            let mut extra = serde_json::Map::new();
            extra.insert("rejected_tampered".into(), r.rejected.into());
            extra.insert("snapshot_bytes".into(), r.snapshot_bytes.into());
            let reports: Vec<LatencyReport> = r.phases().into_iter().cloned().collect();
            emit(args, &reports, extra);
        }
    }
    Ok(())
}
