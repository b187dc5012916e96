//! Gnuplot scripts for the emitted data files.

pub fn bands_script(csv: &str) -> String {
    format!(
        r#"set datafile separator ","
set key outside right
set xlabel "p"
set ylabel "lambda"
set xrange [0:2*pi]
set xtics ("0" 0, "pi/2" pi/2, "pi" pi, "3pi/2" 3*pi/2, "2pi" 2*pi)
set terminal pngcairo size 1000,700
set output "bands.png"
plot for [b=1:2] "{csv}" using 3:($1==b && $2==0 ? $4 : 1/0) with lines lw 2 title sprintf("band %d, delta 0", b), \
     for [b=1:2] "{csv}" using 3:($1==b && $2>0 ? $4 : 1/0) with points pt 7 ps 0.5 title sprintf("band %d, +delta", b), \
     for [b=1:2] "{csv}" using 3:($1==b && $2<0 ? $4 : 1/0) with points pt 6 ps 0.8 title sprintf("band %d, -delta", b)
"#
    )
}

pub fn interface_script(tag: &str, lambda: f64, threshold: f64) -> String {
    format!(
        r#"set datafile separator ","
set terminal pngcairo size 1000,700
set output "sigma_scan_{tag}.png"
set xlabel "lambda"
set ylabel "sigma_min"
set logscale y
set arrow from {lambda},graph 0 to {lambda},graph 1 nohead dt 2
plot "sigma_scan_{tag}.csv" using 1:2 skip 1 with linespoints title "sigma_min", {threshold} title "dip threshold"
unset logscale y
unset arrow
set output "field_{tag}.png"
set xlabel "x1"
set ylabel "x2"
set view map
set size ratio -1
splot "field_{tag}.csv" using 1:2:3 skip 1 with points pt 5 ps 0.6 palette title "Re u"
"#
    )
}
