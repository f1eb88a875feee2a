//! Throwaway PostgreSQL clusters for tests and runnable examples.
//!
//! The server binaries are looked up in `$QUITE_PG_BIN`, then next to a
//! `pg_config` on `PATH`, then inside a Python `pgserver` installation.
//! PostgreSQL refuses to run as root, so under root the server is started as
//! `nobody` through `setpriv`.

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

const NOBODY: u32 = 65534;

fn has_server(dir: &Path) -> bool {
    dir.join("postgres").is_file() && dir.join("initdb").is_file() && dir.join("pg_ctl").is_file()
}

/// Directory holding `initdb`, `pg_ctl` and `postgres`, if one can be found.
pub fn find_pg_bin_dir() -> Option<PathBuf> {
    if let Ok(p) = std::env::var("QUITE_PG_BIN") {
        let p = PathBuf::from(p);
        if has_server(&p) {
            return Some(p);
        }
    }
    if let Ok(out) = Command::new("pg_config").arg("--bindir").output() {
        if out.status.success() {
            let p = PathBuf::from(String::from_utf8_lossy(&out.stdout).trim());
            if has_server(&p) {
                return Some(p);
            }
        }
    }
    let out = Command::new("python3")
        .args(["-c", "import pgserver, os; print(os.path.dirname(pgserver.__file__))"])
        .output()
        .ok()?;
    if !out.status.success() {
        return None;
    }
    let p = PathBuf::from(String::from_utf8_lossy(&out.stdout).trim()).join("pginstall/bin");
    has_server(&p).then_some(p)
}

fn is_root() -> bool {
    // SAFETY: geteuid has no preconditions and cannot fail.
    unsafe { libc::geteuid() == 0 }
}

/// A private cluster listening on a free localhost port. Stopped on drop.
pub struct EphemeralCluster {
    bin: PathBuf,
    dir: TempDir,
    port: u16,
    as_nobody: bool,
}

#[derive(Debug, thiserror::Error)]
#[error("ephemeral cluster: {0}")]
pub struct ClusterError(String);

impl EphemeralCluster {
    pub fn start() -> Result<Self, ClusterError> {
        let bin = find_pg_bin_dir().ok_or_else(|| ClusterError("no PostgreSQL binaries found".into()))?;
        Self::start_with(&bin)
    }

    pub fn start_with(bin: &Path) -> Result<Self, ClusterError> {
        let dir = tempfile::Builder::new()
            .prefix("quite-pg-")
            .tempdir()
            .map_err(|e| ClusterError(e.to_string()))?;
        let as_nobody = is_root();
        if as_nobody {
            let c = std::ffi::CString::new(dir.path().as_os_str().as_encoded_bytes())
                .map_err(|e| ClusterError(e.to_string()))?;
            // SAFETY: c is a valid NUL-terminated path.
            if unsafe { libc::chown(c.as_ptr(), NOBODY, NOBODY) } != 0 {
                return Err(ClusterError("chown of cluster dir failed".into()));
            }
        }
        let port = TcpListener::bind("127.0.0.1:0")
            .and_then(|l| l.local_addr())
            .map(|a| a.port())
            .map_err(|e| ClusterError(e.to_string()))?;
        let cluster = Self {
            bin: bin.to_path_buf(),
            dir,
            port,
            as_nobody,
        };
        let data = cluster.data_dir();
        cluster.run(
            "initdb",
            &[
                "-D",
                data.to_str().unwrap(),
                "-U",
                "postgres",
                "--auth=trust",
                "-E",
                "UTF8",
                "--no-locale",
            ],
        )?;
        let opts = format!(
            "-p {} -k {} -c listen_addresses=127.0.0.1 -c fsync=off -c synchronous_commit=off -c full_page_writes=off",
            port,
            cluster.dir.path().display()
        );
        let log = cluster.dir.path().join("server.log");
        cluster.run(
            "pg_ctl",
            &[
                "-D",
                data.to_str().unwrap(),
                "-o",
                &opts,
                "-l",
                log.to_str().unwrap(),
                "-w",
                "start",
            ],
        )?;
        Ok(cluster)
    }

    fn data_dir(&self) -> PathBuf {
        self.dir.path().join("data")
    }

    fn run(&self, tool: &str, args: &[&str]) -> Result<(), ClusterError> {
        let exe = self.bin.join(tool);
        let mut cmd = if self.as_nobody {
            let mut c = Command::new("setpriv");
            c.args(["--reuid=65534", "--regid=65534", "--clear-groups"]).arg(&exe);
            c
        } else {
            Command::new(&exe)
        };
        let out = cmd
            .args(args)
            .output()
            .map_err(|e| ClusterError(format!("{tool}: {e}")))?;
        if !out.status.success() {
            return Err(ClusterError(format!(
                "{tool} failed: {}{}",
                String::from_utf8_lossy(&out.stdout),
                String::from_utf8_lossy(&out.stderr)
            )));
        }
        Ok(())
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn dsn(&self) -> String {
        format!("host=127.0.0.1 port={} user=postgres dbname=postgres", self.port)
    }
}

impl Drop for EphemeralCluster {
    fn drop(&mut self) {
        let data = self.data_dir();
        let _ = self.run("pg_ctl", &["-D", data.to_str().unwrap_or(""), "-m", "immediate", "stop"]);
    }
}
