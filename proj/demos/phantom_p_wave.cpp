// Simulates one sinus beat on the atrial phantom and writes the 12-lead
// traces as SVG.
//
//   phantom_p_wave [out.svg] [subdivisions]

#include "ssm/ecg.hpp"
#include "ssm/eikonal.hpp"
#include "ssm/io_util.hpp"
#include "ssm/phantom.hpp"
#include "ssm/svg.hpp"
#include "ssm/volumetric.hpp"

#include <cstdlib>
#include <exception>
#include <iostream>

int main(int argc, char** argv)
{
    using namespace ssm;
    try {
        const std::string out = argc > 1 ? argv[1] : "p_wave.svg";
        PhantomSpec spec;
        spec.subdivisions = argc > 2 ? std::atoi(argv[2]) : 4;

        const auto endo = atria_phantom(spec);
        auto wall = extrude_wall(endo);
        wall = assign_fibers(assign_regions(wall, load_region_rules(SSM_DATA_DIR "/regions_phantom.rules")));
        std::cout << "wall: " << wall.num_vertices() << " vertices, " << wall.num_tets() << " tets, LA cavity "
                  << left_side_volume(endo) / 1000.0 << " ml\n";

        const auto act = fast_march(wall, ConductionTable{}, sinus_seed(wall, wall.vertices[37], 2.0));
        double last = 0.0;
        for (double t : act.lat) {
            last = std::max(last, t);
        }
        std::cout << "total activation time " << last << " ms\n";

        const auto movie = vm_movie(act.lat, load_ap_template(SSM_DATA_DIR "/ap_atrial.txt"), 200.0, 1.0);
        auto traces = derive_12_leads(
            surface_potentials(wall, movie, load_electrodes(SSM_DATA_DIR "/electrodes_standard.txt")));
        const auto p = p_wave_duration(traces);
        std::cout << "P wave " << p.duration() << " ms (onset " << p.onset << " in " << lead_names[p.onset_lead]
                  << ", offset " << p.offset << " in " << lead_names[p.offset_lead] << ")\n";

        io::write_file_atomic(out, svg::lead_plot(traces, p));
        std::cout << "wrote " << out << '\n';
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
