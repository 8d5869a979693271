use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use sandbox_core::analysis::{analyze, session_from_bag, stats_tsv, AnalysisError};
use sandbox_core::annotation::duration_stats;
use sandbox_core::bus::bag::BAG_EXTENSION;
use sandbox_core::bus::replay::{replay, ReplayError, ReplayOptions, ThreadSleeper};
use sandbox_core::bus::{Bag, BagError, GameMirror};
use sandbox_core::demo::{golden_script, policy_run};
use sandbox_core::engine::{Scene, SceneError, DEFAULT_SCENE};
use sandbox_core::gateway::{Envelope, Server};
use sandbox_core::runtime::{RecordTarget, Sandbox};
use sandbox_core::script::{run_script_to_file, RunError, ScriptParseError, ScriptedSession, SESSION_EXTENSION};
use sandbox_core::session::{SessionError, SessionRecord};
use sandbox_core::time::Timestamp;

/// Free-play sandbox: record, replay and analyse sessions.
#[derive(Parser)]
#[command(name = "sandbox", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve the gateway and record the next session's free play to FILE.
    Record {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8765")]
        listen: String,
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Play a bag back as NDJSON envelopes on stdout.
    Replay {
        file: PathBuf,
        /// Playback rate; 0 plays as fast as possible.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Seek target in seconds since the bag's time origin.
        #[arg(long)]
        seek: Option<f64>,
        /// Only print the summary.
        #[arg(long)]
        quiet: bool,
    },
    /// Describe a bag: header, per-topic counts and time bounds.
    Info { file: PathBuf },
    /// Run a scripted session headlessly and record it.
    Run {
        script: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Offline zone, transition and proximity report for a bag.
    Analyze {
        bag: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Free-play duration statistics over every bag in a directory.
    Stats {
        bagdir: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        bin_min: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an autonomous policy on the bundled scene and print its actions.
    Robot {
        #[arg(long, value_enum, default_value_t = PolicyArg::Asocial)]
        policy: PolicyArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        steps: u32,
    },
    /// Serve the gateway socket (and a bag directory for replay clients).
    Serve {
        #[arg(long)]
        bags: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8765")]
        listen: String,
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Print the ten-minute demo script.
    DemoScript,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Asocial,
    None,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        // Output piped into e.g. `head`.
        Err(e) if e.chain().any(|c| c.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("sandbox: {e:#}");
            if is_corrupt_input(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

/// Bad bags, scripts, scenes and session records are the user's input
/// being wrong, reported with exit code 2.
fn is_corrupt_input(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        let bag = |b: &BagError| matches!(b, BagError::CorruptBag { .. });
        c.downcast_ref::<BagError>().is_some_and(bag)
            || c.downcast_ref::<ReplayError>().is_some_and(|r| matches!(r, ReplayError::Bag(b) if bag(b)))
            || c.downcast_ref::<AnalysisError>().is_some_and(|r| matches!(r, AnalysisError::Bag(b) if bag(b)))
            || c.downcast_ref::<ScriptParseError>().is_some()
            || c.downcast_ref::<RunError>().is_some_and(|r| matches!(r, RunError::Parse(_)))
            || c.downcast_ref::<SceneError>().is_some()
            || c.downcast_ref::<SessionError>().is_some_and(|s| matches!(s, SessionError::Parse { .. }))
    })
}

fn load_scene(path: Option<&Path>) -> Result<Scene> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(Scene::parse(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => Ok(Scene::parse(DEFAULT_SCENE)?),
    }
}

fn load_bag(path: &Path) -> Result<Bag> {
    Bag::load(path).with_context(|| format!("loading {}", path.display()))
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(io::stdout().write_all(text.as_bytes())?),
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Record { out, listen, scene } => {
            let mut sb = Sandbox::new(load_scene(scene.as_deref())?);
            sb.set_record_target(RecordTarget::File(out.clone()));
            let server = Server::start(listen.as_str(), sb, None)?;
            eprintln!("gateway on {}; recording the next session to {}", server.local_addr(), out.display());
            let sandbox = server.sandbox();
            loop {
                std::thread::sleep(Duration::from_millis(200));
                let sb = sandbox.lock().unwrap_or_else(|e| e.into_inner());
                if let Some(r) = sb.recordings().first() {
                    eprintln!("recorded {} events; live hash {:#018x}", r.index.total(), r.live_hash);
                    if let Some(s) = sb.session().finished().first().or(sb.session().current()) {
                        fs::write(out.with_extension(SESSION_EXTENSION), s.to_text())?;
                    }
                    break;
                }
            }
            server.shutdown();
        }
        Cmd::Replay { file, speed, seek, quiet } => {
            let bag = load_bag(&file)?;
            let opts = ReplayOptions {
                speed,
                seek_to: seek.map(Timestamp::from_secs_f64),
            };
            let mut mirror = GameMirror::new();
            let stdout = io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            let stats = replay(&bag, opts, &mut ThreadSleeper, |e, _| {
                mirror.apply(e);
                if !quiet {
                    let _ = w.write_all(Envelope::from_event(e).to_line().as_bytes());
                }
                Ok(())
            })?;
            w.flush()?;
            eprintln!(
                "played {} events ({} fast-forwarded, {} skipped); final hash {:#018x}",
                stats.played,
                stats.fast_forwarded,
                stats.skipped,
                mirror.hash()
            );
        }
        Cmd::Info { file } => {
            let bag = load_bag(&file)?;
            let mut mirror = GameMirror::new();
            for e in bag.events()? {
                mirror.apply(&e);
            }
            print!("{}", info_text(&bag, mirror.hash()));
        }
        Cmd::Run { script, out, scene } => {
            let text = fs::read_to_string(&script).with_context(|| format!("reading {}", script.display()))?;
            let parsed = ScriptedSession::parse(&text).with_context(|| format!("parsing {}", script.display()))?;
            let outcome = run_script_to_file(&parsed, load_scene(scene.as_deref())?, &out)?;
            for (t, e) in &outcome.robot_errors {
                eprintln!("robot at {t}: {e}");
            }
            println!("session\t{}", outcome.session.id);
            println!("final_hash\t{:#018x}", outcome.final_hash);
            if let Some(r) = &outcome.recording {
                println!("live_hash\t{:#018x}", r.live_hash);
                println!("events\t{}", r.index.total());
            }
        }
        Cmd::Analyze { bag, out } => {
            let report = analyze(&load_bag(&bag)?)?;
            write_out(out.as_deref(), &report.to_tsv())?;
        }
        Cmd::Stats { bagdir, bin_min, out } => {
            if !(bin_min.is_finite() && bin_min > 0.0) {
                bail!("--bin-min must be positive");
            }
            let sessions = collect_sessions(&bagdir)?;
            write_out(out.as_deref(), &stats_tsv(&duration_stats(&sessions, bin_min)))?;
        }
        Cmd::Robot { policy, seed, steps } => {
            let seed = matches!(policy, PolicyArg::Asocial).then_some(seed);
            let events = policy_run(seed, steps)?;
            let stdout = io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            for e in &events {
                w.write_all(Envelope::from_event(e).to_line().as_bytes())?;
            }
            w.flush()?;
            let social = events.iter().filter(|e| e.topic == sandbox_core::bus::message::ROBOT_SOCIAL).count();
            eprintln!("{} robot events over {steps} steps; {social} social", events.len());
        }
        Cmd::Serve { bags, listen, scene } => {
            if let Some(d) = &bags {
                if !d.is_dir() {
                    bail!("{} is not a directory", d.display());
                }
            }
            let server = Server::start(listen.as_str(), Sandbox::new(load_scene(scene.as_deref())?), bags)?;
            eprintln!("gateway on {}", server.local_addr());
            server.wait();
        }
        Cmd::DemoScript => print!("{}", golden_script()),
    }
    Ok(())
}

fn info_text(bag: &Bag, hash: u64) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "session\t{}", bag.header.session_id);
    let _ = writeln!(s, "epoch_us\t{}", bag.header.epoch_us);
    let _ = writeln!(s, "records\t{}", bag.len());
    if let Some((a, b)) = bag.time_bounds() {
        let _ = writeln!(s, "start\t{a}\nend\t{b}\nduration_s\t{:.6}", b.saturating_sub(a).as_secs_f64());
    }
    let _ = writeln!(s, "recovered_index\t{}", bag.recovered());
    let _ = writeln!(s, "final_hash\t{hash:#018x}");
    s.push_str("topic\tschema\tcount\tfirst\tlast\n");
    for t in &bag.index().topics {
        let info = &bag.header.topics[t.topic_id as usize];
        let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", info.name, info.schema, t.count, t.first, t.last);
    }
    s
}

/// Session records for the bags in `dir`: the record file next to a bag
/// when there is one, otherwise rebuilt from the bag's stage events.
fn collect_sessions(dir: &Path) -> Result<Vec<SessionRecord>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == BAG_EXTENSION))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let record = p.with_extension(SESSION_EXTENSION);
        let session = if record.exists() {
            let text = fs::read_to_string(&record)?;
            Some(SessionRecord::parse(&text).with_context(|| format!("parsing {}", record.display()))?)
        } else {
            session_from_bag(&load_bag(&p)?)?
        };
        out.extend(session);
    }
    Ok(out)
}
