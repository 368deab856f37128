//! Websocket transport for the steering protocol: one session per connection.

use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};

use metamorph::session::Session;
use tungstenite::{accept, Message};

static NEXT_SESSION: AtomicU64 = AtomicU64::new(1);

pub fn run(host: &str, port: u16) -> std::io::Result<()> {
    let listener = TcpListener::bind((host, port))?;
    eprintln!("listening on ws://{}", listener.local_addr()?);
    for stream in listener.incoming() {
        let stream = stream?;
        std::thread::spawn(move || {
            if let Err(e) = connection(stream) {
                eprintln!("connection closed: {e}");
            }
        });
    }
    Ok(())
}

fn connection(stream: TcpStream) -> Result<(), Box<dyn std::error::Error>> {
    let mut ws = accept(stream)?;
    let mut session = Session::new(NEXT_SESSION.fetch_add(1, Ordering::Relaxed));
    loop {
        let text = match ws.read()? {
            Message::Text(t) => t,
            Message::Close(_) => return Ok(()),
            _ => continue,
        };
        for reply in session.handle_text(&text) {
            ws.send(Message::text(reply))?;
        }
    }
}
