use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trienotary::audit::{audit_ledger, make_audit_proof, verify_audit_proof_bytes, AuditReport, Claim};
use trienotary::bench::{run_bench, BenchConfig};
use trienotary::chain::read_roots_from;
use trienotary::faults::{self, FaultClass};
use trienotary::merkle_ledger::Ledger;
use trienotary::sim::{SimConfig, Simulation};
use trienotary::trie::{stats, TrieParams, TrieVersion};
use trienotary::workdir::Workdir;
use trienotary::{Digest, HashAlg};

#[derive(Parser)]
#[command(name = "trienotary", version, about = "Notarize many append-only ledgers under one chained digest")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct WorkdirArg {
    /// Deployment directory.
    #[arg(long, env = "NOTARY_WORKDIR", default_value = "notary-work")]
    workdir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Measure trie structure over a grid of (r, k, ledgers) and print CSV.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
        r: Vec<u16>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        k: Vec<u16>,
        #[arg(long, value_delimiter = ',', default_value = "100000")]
        ledgers: Vec<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "sha256")]
        hash: HashAlg,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip cells whose estimated working set exceeds this many bytes.
        #[arg(long)]
        memory_budget: Option<u64>,
    },
    /// Run a seeded multi-round simulation into a fresh workdir.
    Simulate {
        #[command(flatten)]
        dir: WorkdirArg,
        #[arg(long, default_value_t = 10)]
        ledgers: usize,
        #[arg(long, default_value_t = 3)]
        rounds: u64,
        /// Mean blocks appended per ledger per round.
        #[arg(long, default_value_t = 1.0)]
        append_rate: f64,
        /// Let half of the ledgers join at random later rounds.
        #[arg(long)]
        late_joins: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        r: u16,
        #[arg(long, default_value_t = 4)]
        k: u16,
        #[arg(long, default_value = "sha256")]
        hash: HashAlg,
        /// Replace an existing deployment in the workdir.
        #[arg(long)]
        force: bool,
    },
    /// Create an empty deployment.
    Init {
        #[command(flatten)]
        dir: WorkdirArg,
        #[arg(long, default_value_t = 4)]
        r: u16,
        #[arg(long, default_value_t = 4)]
        k: u16,
        #[arg(long, default_value = "sha256")]
        hash: HashAlg,
        #[arg(long)]
        force: bool,
    },
    /// Append a block to a ledger, creating the ledger if needed.
    Append {
        #[command(flatten)]
        dir: WorkdirArg,
        #[arg(long)]
        id: String,
        /// Block payload as text.
        #[arg(long, conflicts_with = "hex")]
        payload: Option<String>,
        /// Block payload as hex.
        #[arg(long)]
        hex: Option<String>,
    },
    /// Notarize the current state of every ledger in the workdir.
    Notarize {
        #[command(flatten)]
        dir: WorkdirArg,
    },
    /// Audit one ledger against the chain and public storage.
    Audit {
        #[command(flatten)]
        dir: WorkdirArg,
        #[arg(long)]
        id: String,
        /// Digest handed to the auditor, in hex.
        #[arg(long, conflicts_with = "disclose")]
        claim: Option<String>,
        /// Use the workdir's copy of the ledger as the disclosed data.
        #[arg(long)]
        disclose: bool,
        #[arg(long)]
        json: bool,
    },
    /// Write a self-contained audit proof for one ledger.
    Prove {
        #[command(flatten)]
        dir: WorkdirArg,
        #[arg(long)]
        id: String,
        /// Last round covered; defaults to the latest.
        #[arg(long)]
        round: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check an audit proof against a published chain journal.
    Verify {
        #[arg(long)]
        proof: PathBuf,
        #[arg(long)]
        id: String,
        /// Chain journal to check against.
        #[arg(long)]
        chain: Option<PathBuf>,
        /// Read the chain journal from this workdir when --chain is absent.
        #[arg(long, env = "NOTARY_WORKDIR")]
        workdir: Option<PathBuf>,
        #[arg(long, default_value = "sha256")]
        hash: HashAlg,
        #[arg(long)]
        claim: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Print the chain journal.
    Chain {
        #[command(flatten)]
        dir: WorkdirArg,
    },
    /// Print structural measurements of one notarized version.
    Stats {
        #[command(flatten)]
        dir: WorkdirArg,
        /// Round to measure; defaults to the latest.
        #[arg(long)]
        round: Option<u64>,
    },
    /// Inject a fault into a workdir (test hook).
    #[command(hide = true)]
    Tamper {
        #[command(flatten)]
        dir: WorkdirArg,
        #[arg(long)]
        fault: FaultClass,
        #[arg(long)]
        id: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn params(r: u16, k: u16, hash: HashAlg) -> Result<TrieParams> {
    Ok(TrieParams::new(r, k, hash)?)
}

fn parse_digest(hex: &str, alg: HashAlg) -> Result<Digest> {
    let digest = Digest::from_hex(hex).ok_or_else(|| anyhow!("{hex:?} is not a hex digest"))?;
    if digest.len() != alg.output_len() {
        bail!("digest has {} bytes, {alg} needs {}", digest.len(), alg.output_len());
    }
    Ok(digest)
}

fn print_report(report: &AuditReport, json: bool) -> Result<ExitCode> {
    if json {
        println!("{}", serde_json::to_string_pretty(report)?);
    } else {
        println!("{report}");
    }
    Ok(ExitCode::from(report.exit_code() as u8))
}

fn save_round(wd: &Workdir, ledgers: &[Ledger]) -> Result<()> {
    for ledger in ledgers {
        wd.save_ledger(ledger)?;
    }
    wd.save_state()?;
    Ok(())
}

fn cmd_simulate(dir: &Path, config: SimConfig, force: bool) -> Result<()> {
    let mut wd = Workdir::create(dir, config.params, force)?;
    let mut sim = Simulation::new(config);
    sim.run(&wd.store, &mut wd.chain)?;
    let (state, ledgers) = sim.into_parts();
    wd.state = state;
    save_round(&wd, &ledgers)?;
    println!(
        "{} rounds over {} ledgers written to {}",
        wd.chain.height(),
        ledgers.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_tamper(dir: &Path, fault: FaultClass, id: &str, seed: u64) -> Result<()> {
    let mut wd = Workdir::open(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key = wd.state.alg().hash(id.as_bytes());
    let height = wd.chain.height();
    match fault {
        FaultClass::KeyRemoval => {
            wd.state = faults::remove_key(&wd.state, &key, &wd.store, &mut wd.chain)?;
            wd.save_state()?;
        }
        FaultClass::ForkWithoutProof => {
            let ledger = wd
                .find_ledger(id.as_bytes())?
                .ok_or_else(|| anyhow!("no ledger {id:?} in the workdir"))?;
            wd.state = faults::fork_without_proof(&wd.state, &ledger, &wd.store, &mut wd.chain)?;
            save_round(&wd, &[faults::forked_copy(&ledger)])?;
        }
        FaultClass::ChainRootMismatch => {
            let mut roots = wd.chain.read_roots();
            let round = rng.gen_range(0..roots.len().max(1));
            faults::swap_published_root(&mut roots, round, &mut rng)?;
            let journal = fs::read_to_string(wd.chain_path())?;
            let rewritten = faults::rewrite_journal_root(&journal, round as u64, &roots[round])?;
            fs::write(wd.chain_path(), rewritten)?;
        }
        FaultClass::CorruptNode => {
            if height == 0 {
                bail!("nothing notarized yet");
            }
            let round = rng.gen_range(0..height) as usize;
            let version = TrieVersion::new(wd.state.params, wd.chain.read_roots()[round]);
            faults::corrupt_path_node(&wd.store, &version, &key, &mut rng)?;
        }
        FaultClass::CorruptProof => {
            faults::corrupt_stored_proof(&wd.store, &key, height, &mut rng)?;
        }
    }
    println!("injected {fault} for {id}");
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Bench {
            r,
            k,
            ledgers,
            seed,
            hash,
            out,
            memory_budget,
        } => {
            let config = BenchConfig {
                arities: r,
                capacities: k,
                ledger_counts: ledgers,
                seed,
                alg: hash,
                memory_budget,
            };
            match out {
                Some(path) => {
                    let mut file = io::BufWriter::new(
                        fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?,
                    );
                    run_bench(&config, &mut file)?;
                }
                None => {
                    run_bench(&config, &mut io::stdout().lock())?;
                }
            }
        }
        Command::Simulate {
            dir,
            ledgers,
            rounds,
            append_rate,
            late_joins,
            seed,
            r,
            k,
            hash,
            force,
        } => {
            if !(append_rate >= 0.0 && append_rate.is_finite()) {
                bail!("append rate must be a non-negative number");
            }
            let mut config = SimConfig::new(params(r, k, hash)?, ledgers, rounds, seed);
            config.append_rate = append_rate;
            config.late_joins = late_joins;
            cmd_simulate(&dir.workdir, config, force)?;
        }
        Command::Init { dir, r, k, hash, force } => {
            Workdir::create(&dir.workdir, params(r, k, hash)?, force)?;
            println!("initialized {}", dir.workdir.display());
        }
        Command::Append { dir, id, payload, hex } => {
            let wd = Workdir::open(&dir.workdir)?;
            let payload = match (payload, hex) {
                (Some(text), None) => text.into_bytes(),
                (None, Some(h)) => hex::decode(h).context("payload is not hex")?,
                _ => bail!("give exactly one of --payload or --hex"),
            };
            let mut ledger = wd
                .find_ledger(id.as_bytes())?
                .unwrap_or_else(|| Ledger::new(wd.state.alg(), id.as_bytes().to_vec()));
            let index = ledger.append(payload).index();
            wd.save_ledger(&ledger)?;
            println!("{id}: block {index}, root {}", ledger.root());
        }
        Command::Notarize { dir } => {
            let mut wd = Workdir::open(&dir.workdir)?;
            let ledgers = wd.load_ledgers()?;
            let (state, report) = wd.state.notarize_round(&ledgers, &wd.store, &mut wd.chain)?;
            wd.state = state;
            wd.save_state()?;
            println!(
                "round {}: root {}, {} new nodes, {} proofs, {} new ledgers",
                report.record.seq,
                report.record.trie_root,
                report.new_nodes,
                report.proofs_published,
                report.new_ledgers
            );
        }
        Command::Audit {
            dir,
            id,
            claim,
            disclose,
            json,
        } => {
            let wd = Workdir::open(&dir.workdir)?;
            let alg = wd.state.alg();
            let claim = match (claim, disclose) {
                (Some(hex), _) => Some(Claim::digest(parse_digest(&hex, alg)?)),
                (None, true) => {
                    let ledger = wd
                        .find_ledger(id.as_bytes())?
                        .ok_or_else(|| anyhow!("no ledger {id:?} in the workdir to disclose"))?;
                    Some(Claim::ledger(&ledger))
                }
                (None, false) => None,
            };
            let roots = wd.chain.read_roots();
            let report = audit_ledger(&wd.state.params, id.as_bytes(), claim.as_ref(), &roots, &wd.store);
            if report.history.iter().all(|v| *v == trienotary::audit::HistoryValue::Null) {
                eprintln!("ledger {id:?} was not found in any notarized round");
            }
            return print_report(&report, json);
        }
        Command::Prove { dir, id, round, out } => {
            let wd = Workdir::open(&dir.workdir)?;
            let roots = wd.chain.read_roots();
            let up_to = match round {
                Some(r) => r,
                None => (roots.len() as u64).checked_sub(1).ok_or_else(|| anyhow!("nothing notarized yet"))?,
            };
            let proof = make_audit_proof(&wd.state.params, id.as_bytes(), up_to, &roots, &wd.store)?;
            let bytes = proof.to_bytes();
            fs::write(&out, &bytes).with_context(|| format!("writing {}", out.display()))?;
            println!(
                "audit proof for {id} up to round {up_to}: {} nodes, {} consistency proofs, {} bytes",
                proof.nodes.len(),
                proof.proofs.len(),
                bytes.len()
            );
        }
        Command::Verify {
            proof,
            id,
            chain,
            workdir,
            hash,
            claim,
            json,
        } => {
            let (chain_path, alg) = match (chain, workdir) {
                (Some(path), _) => (path, hash),
                (None, Some(dir)) => {
                    let wd = Workdir::open(&dir)?;
                    (wd.chain_path(), wd.state.alg())
                }
                (None, None) => bail!("give --chain or --workdir"),
            };
            let roots = read_roots_from(&chain_path, alg)?;
            let bytes = fs::read(&proof).with_context(|| format!("reading {}", proof.display()))?;
            let claim = claim.map(|h| parse_digest(&h, alg)).transpose()?.map(Claim::digest);
            let report = verify_audit_proof_bytes(&bytes, id.as_bytes(), claim.as_ref(), &roots);
            return print_report(&report, json);
        }
        Command::Chain { dir } => {
            let wd = Workdir::open(&dir.workdir)?;
            io::stdout().write_all(wd.chain.render().as_bytes())?;
        }
        Command::Stats { dir, round } => {
            let wd = Workdir::open(&dir.workdir)?;
            let roots = wd.chain.read_roots();
            let round = round.unwrap_or((roots.len() as u64).saturating_sub(1)) as usize;
            let root = roots.get(round).ok_or_else(|| anyhow!("round {round} is not published"))?;
            let m = stats(&wd.store, &TrieVersion::new(wd.state.params, *root))?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Tamper { dir, fault, id, seed } => cmd_tamper(&dir.workdir, fault, &id, seed)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let reads_history = matches!(cli.command, Command::Audit { .. } | Command::Verify { .. });
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            // An audit that cannot even start proves nothing either way.
            ExitCode::from(if reads_history { 2 } else { 1 })
        }
    }
}
