//! Plain tools: device interaction and fixture-backed external information.

mod device;
mod external;

pub use device::{
    disambiguate, parse_plan, render_device_summaries, render_plan, retrieve_docs, AttributeTool, CommandTool,
    DeviceImageIndex, Disambiguation, DisambiguationTool, DocsTool, ImageEntry, PlanStep, PlannerTool,
    PLANNER_TEMPLATE,
};
pub use external::{
    render_listings, Temperature, TvListing, TvSchedule, TvScheduleTool, WeatherData,
    WeatherReport, WeatherTool,
};
