//! Optional local service endpoint: line-delimited JSON over TCP, mirroring
//! the CLI one-to-one. Each request line is a platform `Command`; each
//! response line is `{"ok": ...}` or `{"error": ..., "exit_code": ...}`.
//! A thin adapter over the same command processor, not a second code path.

use sensornet_core::platform::{Command, Platform, PlatformError};
use serde::Serialize;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;

#[derive(Serialize)]
#[serde(untagged)]
enum Response<T: Serialize> {
    Ok { ok: T },
    Err { error: String, exit_code: i32 },
}

pub fn serve(
    mut platform: Platform,
    addr: &str,
    max_connections: u64,
) -> Result<(), PlatformError> {
    let listener = TcpListener::bind(addr)?;
    eprintln!("listening on {}", listener.local_addr()?);
    let mut served = 0u64;
    for stream in listener.incoming() {
        let stream = stream?;
        let mut writer = stream.try_clone()?;
        let reader = BufReader::new(stream);
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let reply = match serde_json::from_str::<Command>(&line) {
                Ok(command) => match platform.process(command) {
                    Ok(output) => serde_json::to_string(&Response::Ok { ok: output }),
                    Err(e) => serde_json::to_string(&Response::<()>::Err {
                        error: e.to_string(),
                        exit_code: e.exit_code(),
                    }),
                },
                Err(e) => serde_json::to_string(&Response::<()>::Err {
                    error: format!("bad request: {e}"),
                    exit_code: 2,
                }),
            }
            .expect("response serializes");
            writer.write_all(reply.as_bytes())?;
            writer.write_all(b"\n")?;
        }
        served += 1;
        if max_connections > 0 && served >= max_connections {
            break;
        }
    }
    Ok(())
}
