//! Runs the job service in-process: submits two jobs, polls progress and
//! shows the run cache answering a repeated request.

#[path = "shared/mod.rs"]
mod shared;

use std::time::Duration;

use xcompose::core_model::PipelineConfig;
use xcompose::service::{JobService, Priority, ServiceConfig};

fn main() -> xcompose::Result<()> {
    let dir = shared::out_dir("job_service");
    let svc = JobService::start(&ServiceConfig { data_dir: dir.clone(), ..ServiceConfig::default() })?;

    let a = svc.submit(shared::scene(), Priority::Normal, false).expect("valid job");
    let b = svc
        .submit(shared::scene().with_cfg(PipelineConfig { seed: 1, ..PipelineConfig::default() }), Priority::High, false)
        .expect("valid job");
    loop {
        let r = svc.get(&a.job_id).unwrap();
        println!("{} {:?} {:?} step {:?}", r.job_id, r.state, r.progress.stage, r.progress.step);
        if r.state.is_terminal() {
            break;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    svc.wait(&b.job_id, Duration::from_secs(60));

    let again = svc.submit(shared::scene(), Priority::Low, false).expect("valid job");
    let again = svc.wait(&again.job_id, Duration::from_secs(60)).unwrap();
    println!("resubmitted: {:?}, cached {}", again.state, again.cached);
    for r in svc.list() {
        println!("{} {:?} {}", r.job_id, r.state, r.result.map(|a| a.result.display().to_string()).unwrap_or_default());
    }
    Ok(())
}
